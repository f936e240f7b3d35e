use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::KvDoc;

/// Optimization hyperparameters. `total_steps` sets the cosine period.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub seed: u64,
    /// Evaluate training-batch PSNR every this many steps (0 disables).
    pub psnr_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-4,
            lr_min: 1e-6,
            total_steps: 1000,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            crop: 256,
            seed: 0,
            psnr_every: 50,
        }
    }
}

fn invalid(reason: String) -> Error {
    Error::invalid("train config", reason)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_max", self.lr_max), ("lr_min", self.lr_min), ("eps", self.eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr_min > self.lr_max {
            return Err(invalid(format!(
                "lr_min {} exceeds lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(8) {
            return Err(invalid(format!(
                "crop must be a positive multiple of 8, got {}",
                self.crop
            )));
        }
        Ok(())
    }

    /// Keys understood by [`take_from`](Self::take_from); `total_steps` is not among them.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lr_max={:e}", self.lr_max);
        let _ = writeln!(out, "lr_min={:e}", self.lr_min);
        let _ = writeln!(out, "weight_decay={:e}", self.weight_decay);
        let _ = writeln!(out, "beta1={}", self.beta1);
        let _ = writeln!(out, "beta2={}", self.beta2);
        let _ = writeln!(out, "eps={:e}", self.eps);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "crop={}", self.crop);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "psnr_every={}", self.psnr_every);
        out
    }

    /// Override defaults with any training keys present in `doc`.
    pub fn take_from(doc: &mut KvDoc) -> Result<Self> {
        let mut c = TrainConfig::default();
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = doc.take(stringify!($field))? {
                    c.$field = v;
                }
            )*};
        }
        take!(
            lr_max,
            lr_min,
            weight_decay,
            beta1,
            beta2,
            eps,
            batch_size,
            crop,
            seed,
            psnr_every
        );
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.lr_max, c.lr_min, c.weight_decay), (1e-4, 1e-6, 1e-4));
    }

    #[test]
    fn document_round_trip() {
        let c = TrainConfig {
            lr_max: 3e-4,
            batch_size: 2,
            crop: 32,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut doc = KvDoc::parse(&c.to_document()).unwrap();
        let back = TrainConfig::take_from(&mut doc).unwrap();
        doc.finish().unwrap();
        assert_eq!(
            back,
            TrainConfig {
                total_steps: back.total_steps,
                ..c
            }
        );
    }

    #[test]
    fn rejects_inverted_schedule() {
        let c = TrainConfig {
            lr_min: 1e-3,
            ..TrainConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("lr_min"));
        let c = TrainConfig {
            crop: 30,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
