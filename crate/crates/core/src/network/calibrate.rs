//! Search for a configuration matching a parameter and MAC budget.

use std::fmt;

use super::config::{NetworkConfig, STAGES};
use super::count::{count_macs_for, count_params_for};
use crate::error::{Error, Result};

/// Base widths tried, smallest first.
pub const WIDTH_CANDIDATES: [usize; 7] = [24, 28, 32, 36, 40, 44, 48];

/// Encoder depths tried at each width, in order. The first entry is the
/// conventional 3-3-6-3 layout; later entries move capacity to coarser stages.
pub const DEPTH_CANDIDATES: [[usize; STAGES]; 8] = [
    [3, 3, 6, 3],
    [2, 2, 6, 3],
    [2, 2, 6, 2],
    [1, 2, 6, 3],
    [1, 1, 6, 3],
    [2, 2, 4, 4],
    [1, 1, 4, 4],
    [1, 1, 3, 5],
];

/// Spatial size the MAC budget refers to.
pub const CALIBRATION_HW: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub config: NetworkConfig,
    pub params: usize,
    pub macs: u64,
    /// Signed relative deviations from the targets.
    pub params_dev: f64,
    pub macs_dev: f64,
}

impl Calibration {
    fn evaluate(config: NetworkConfig, target_params: f64, target_macs: f64) -> Result<Self> {
        let params = count_params_for(&config)?;
        let macs = count_macs_for(&config, CALIBRATION_HW, CALIBRATION_HW)?;
        Ok(Calibration {
            params_dev: params as f64 / target_params - 1.0,
            macs_dev: macs as f64 / target_macs - 1.0,
            config,
            params,
            macs,
        })
    }

    fn worst_dev(&self) -> f64 {
        self.params_dev.abs().max(self.macs_dev.abs())
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.worst_dev() <= tolerance
    }
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "base_width={} encoder_depths={:?} params={} ({:+.1}%) macs={} ({:+.1}%)",
            self.config.base_width,
            self.config.encoder_depths,
            self.params,
            100.0 * self.params_dev,
            self.macs,
            100.0 * self.macs_dev
        )
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationError {
    /// Closest candidates by worst relative deviation.
    pub nearest: Vec<Calibration>,
    pub tolerance: f64,
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no configuration within {:.1}% of both targets; nearest:",
            100.0 * self.tolerance
        )?;
        for c in &self.nearest {
            write!(f, "\n  {c}")?;
        }
        Ok(())
    }
}

impl std::error::Error for CalibrationError {}

/// First configuration (smallest width first, then candidate order) whose
/// parameter count and MACs at 256×256 are both within `tolerance` (relative).
pub fn calibrate(
    target_params: f64,
    target_macs: f64,
    tolerance: f64,
) -> Result<std::result::Result<Calibration, CalibrationError>> {
    if !(target_params > 0.0 && target_macs > 0.0 && tolerance >= 0.0) {
        return Err(Error::invalid(
            "calibrate",
            "targets must be positive and tolerance non-negative",
        ));
    }
    let mut tried = Vec::new();
    for &width in &WIDTH_CANDIDATES {
        for depths in DEPTH_CANDIDATES {
            let cal = Calibration::evaluate(NetworkConfig::with_width(width, depths), target_params, target_macs)?;
            if cal.within(tolerance) {
                return Ok(Ok(cal));
            }
            tried.push(cal);
        }
    }
    tried.sort_by(|a, b| a.worst_dev().total_cmp(&b.worst_dev()));
    tried.truncate(3);
    Ok(Err(CalibrationError {
        nearest: tried,
        tolerance,
    }))
}
