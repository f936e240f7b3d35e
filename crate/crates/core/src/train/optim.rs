//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Moment estimates per parameter slot (`None` for buffers) and the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl OptimState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Option<Tensor>> = store
            .iter()
            .map(|(_, spec, t)| (spec.kind == ParamKind::Learnable).then(|| Tensor::zeros(t.shape())))
            .collect();
        OptimState {
            step: 0,
            v: zeros.clone(),
            m: zeros,
        }
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`, held at `lr_min` past the end.
pub fn cosine_lr(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.total_steps == 0 {
        return cfg.lr_max;
    }
    let frac = step.min(cfg.total_steps) as f64 / cfg.total_steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One scalar AdamW update at step `t` (1-based), all in f64.
/// Returns the new `(param, m, v)`.
pub fn adamw_scalar(p: f64, g: f64, m: f64, v: f64, t: u64, lr: f64, cfg: &TrainConfig) -> (f64, f64, f64) {
    let m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1.powf(t as f64));
    let v_hat = v / (1.0 - cfg.beta2.powf(t as f64));
    let decayed = p - lr * cfg.weight_decay * p;
    (decayed - lr * m_hat / (v_hat.sqrt() + cfg.eps), m, v)
}

/// Apply one AdamW step to every learnable parameter. Missing gradients count as zero.
///
/// Nothing is modified when any gradient is non-finite.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &Grads,
    state: &mut OptimState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::invalid("adamw_step", format!("learning rate {lr}")));
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("adamw_step", "state slots", state.m.len(), params.len()));
    }
    if let Some(name) = grads.first_non_finite(params) {
        return Err(Error::NonFinite(format!(
            "gradient of {name} at step {}; update rejected",
            state.step + 1
        )));
    }
    let t = state.step + 1;
    let ids: Vec<_> = params.learnable_ids().collect();
    for id in ids {
        let i = id.index();
        let (Some(m), Some(v)) = (state.m[i].as_mut(), state.v[i].as_mut()) else {
            return Err(Error::invalid(
                "adamw_step",
                format!("no moments for {}", params.spec(id).name),
            ));
        };
        let g = grads.get(id);
        let p = params.get_mut(id);
        if m.shape() != p.shape() {
            return Err(Error::shape("adamw_step", "moment size", m.numel(), p.numel()));
        }
        for k in 0..p.numel() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            let (np, nm, nv) = adamw_scalar(
                f64::from(p.data()[k]),
                f64::from(gk),
                f64::from(m.data()[k]),
                f64::from(v.data()[k]),
                t,
                lr,
                cfg,
            );
            p.data_mut()[k] = np as f32;
            m.data_mut()[k] = nm as f32;
            v.data_mut()[k] = nv as f32;
        }
    }
    state.step = t;
    Ok(())
}
