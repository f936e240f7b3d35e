//! The optimization loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{batch_indices, random_crop_pair, ImageSample};
use super::metrics::{mse_loss, psnr, ssim};
use super::optim::{adamw_step, cosine_lr, OptimState};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Tensor;

/// Stream offset separating crop randomness from the epoch shuffles.
const CROP_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    /// 1-based index of the completed step.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// PSNR of the step's predictions against the sharp crops, when evaluated.
    pub psnr: Option<f64>,
}

/// Crops for step `step` (0-based), stacked into blur and sharp batches.
pub fn step_batch(data: &[ImageSample], cfg: &TrainConfig, step: u64) -> Result<(Tensor, Tensor)> {
    if data.is_empty() {
        return Err(Error::invalid("train", "dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CROP_STREAM | step);
    let mut blur = Vec::with_capacity(cfg.batch_size);
    let mut sharp = Vec::with_capacity(cfg.batch_size);
    for i in batch_indices(cfg.seed, step, cfg.batch_size, data.len()) {
        let c = random_crop_pair(&data[i], cfg.crop, &mut rng)?;
        blur.push(c.blur);
        sharp.push(c.sharp);
    }
    let blur: Vec<&Tensor> = blur.iter().collect();
    let sharp: Vec<&Tensor> = sharp.iter().collect();
    Ok((Tensor::stack(&blur)?, Tensor::stack(&sharp)?))
}

/// Run steps until `optim.step == until`. Each step is a pure function of
/// `(model, optim, data, cfg)`, so stopping and resuming reproduces an
/// uninterrupted run bit for bit.
///
/// `on_step` sees every completed step; returning an error stops training.
pub fn train_steps(
    model: &mut Model,
    optim: &mut OptimState,
    data: &[ImageSample],
    cfg: &TrainConfig,
    until: u64,
    mut on_step: impl FnMut(&StepLog, &Model, &OptimState) -> Result<()>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let mut history = Vec::new();
    while optim.step < until {
        let step = optim.step;
        let lr = cosine_lr(step, cfg);
        let (blur, sharp) = step_batch(data, cfg, step)?;
        let (pred, cache) = model.forward_train(&blur)?;
        let (loss, dpred) = mse_loss(&pred, &sharp)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", step + 1)));
        }
        let grads = model.backward(&cache, &dpred)?;
        adamw_step(&mut model.params, &grads, optim, cfg, lr)?;
        let done = optim.step;
        let periodic = cfg.psnr_every > 0 && done.is_multiple_of(cfg.psnr_every);
        let log = StepLog {
            step: done,
            lr,
            loss,
            psnr: if periodic || done == cfg.total_steps {
                Some(psnr(&pred, &sharp)?)
            } else {
                None
            },
        };
        on_step(&log, model, optim)?;
        history.push(log);
    }
    Ok(history)
}

/// Fresh optimizer, `cfg.total_steps` steps.
pub fn train_loop(model: &mut Model, data: &[ImageSample], cfg: &TrainConfig) -> Result<Vec<StepLog>> {
    let mut optim = OptimState::new(&model.params);
    train_steps(model, &mut optim, data, cfg, cfg.total_steps, |_, _, _| Ok(()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean eval-mode PSNR and SSIM over whole images.
pub fn evaluate(model: &Model, data: &[ImageSample]) -> Result<EvalReport> {
    evaluate_with(data, |blur| model.forward(blur))
}

/// Metrics of the blurred inputs themselves, the floor any model must beat.
pub fn identity_baseline(data: &[ImageSample]) -> Result<EvalReport> {
    evaluate_with(data, |blur| Ok(blur.clone()))
}

fn evaluate_with(data: &[ImageSample], f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "dataset is empty"));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for sample in data {
        let out = f(&sample.blur)?;
        p += psnr(&out, &sample.sharp)?;
        s += ssim(&out, &sample.sharp)?;
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        psnr: p / n,
        ssim: s / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::train::blur::MotionKernel;
    use crate::train::data::synthetic_pairs;

    fn setup() -> (Model, Vec<ImageSample>, TrainConfig) {
        let k = MotionKernel::linear(5, 30.0).unwrap();
        let data = synthetic_pairs(3, 24, 24, &k, 2).unwrap();
        let cfg = TrainConfig {
            total_steps: 6,
            batch_size: 2,
            crop: 16,
            seed: 11,
            psnr_every: 2,
            lr_max: 1e-3,
            ..TrainConfig::default()
        };
        (Model::build(&NetworkConfig::tiny(4), 1).unwrap(), data, cfg)
    }

    #[test]
    fn split_run_equals_straight_run() {
        let (mut a, data, cfg) = setup();
        let mut b = a.clone();
        let ha = train_loop(&mut a, &data, &cfg).unwrap();
        let mut opt = OptimState::new(&b.params);
        let mut hb = train_steps(&mut b, &mut opt, &data, &cfg, 3, |_, _, _| Ok(())).unwrap();
        let mut opt = opt.clone();
        hb.extend(train_steps(&mut b, &mut opt, &data, &cfg, 6, |_, _, _| Ok(())).unwrap());
        assert_eq!(a.params, b.params);
        assert_eq!(ha, hb);
    }

    #[test]
    fn history_has_periodic_psnr() {
        let (mut m, data, cfg) = setup();
        let h = train_loop(&mut m, &data, &cfg).unwrap();
        assert_eq!(h.len(), 6);
        let with: Vec<u64> = h.iter().filter(|l| l.psnr.is_some()).map(|l| l.step).collect();
        assert_eq!(with, [2, 4, 6]);
        assert!(h.windows(2).all(|w| w[1].lr <= w[0].lr));
    }

    #[test]
    fn fresh_model_matches_identity_baseline() {
        let (m, data, _) = setup();
        assert_eq!(evaluate(&m, &data).unwrap(), identity_baseline(&data).unwrap());
    }
}
