//! Per-channel batch normalization over `(n, h, w)`.

use super::{ensure_same_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running averages.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Fold a train-mode forward's batch statistics into the running averages.
    pub fn absorb(&mut self, cache: &BnCache) {
        if cache.mode != BnMode::Train {
            return;
        }
        let m = self.momentum as f64;
        for (c, (&mean, &var)) in cache.batch_mean.iter().zip(&cache.batch_var).enumerate() {
            self.running_mean[c] = ((1.0 - m) * self.running_mean[c] as f64 + m * mean) as f32;
            self.running_var[c] = ((1.0 - m) * self.running_var[c] as f64 + m * var) as f32;
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        let lens = [
            ("gamma length", self.gamma.len()),
            ("beta length", self.beta.len()),
            ("running_mean length", self.running_mean.len()),
            ("running_var length", self.running_var.len()),
        ];
        for (dim, len) in lens {
            if len != channels {
                return Err(Error::shape("batchnorm2d", dim, len, channels));
            }
        }
        Ok(())
    }
}

/// What the backward pass needs from a train-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub mode: BnMode,
    /// Normalized activations before the affine transform.
    pub x_hat: Tensor,
    pub inv_std: Vec<f32>,
    /// Batch mean and unbiased variance per channel; empty in eval mode.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Forward batch norm. Train mode mutates `state`'s running statistics exactly once.
///
/// Running variance is updated with the unbiased batch variance; normalization
/// uses the biased one.
pub fn batchnorm2d(input: &Tensor, state: &mut BnState, mode: BnMode) -> Result<(Tensor, BnCache)> {
    let (out, cache) = batchnorm2d_pure(input, state, mode)?;
    state.absorb(&cache);
    Ok((out, cache))
}

/// Forward batch norm without touching `state`; a train-mode cache carries the
/// batch statistics for a later [`BnState::absorb`].
pub fn batchnorm2d_pure(input: &Tensor, state: &BnState, mode: BnMode) -> Result<(Tensor, BnCache)> {
    let s = input.shape();
    state.check(s.c)?;
    let count = s.n * s.plane();
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut x_hat = Tensor::zeros(s);
    let mut inv_std = vec![0.0f32; s.c];
    let mut batch_mean = Vec::new();
    let mut batch_var = Vec::new();

    #[allow(clippy::needless_range_loop)]
    for c in 0..s.c {
        let (mean, inv) = match mode {
            BnMode::Train => {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                batch_mean.push(mean);
                batch_var.push(if count > 1 { sq / (count - 1) as f64 } else { var });
                (mean, 1.0 / (var + state.eps as f64).sqrt())
            }
            BnMode::Eval => (
                state.running_mean[c] as f64,
                1.0 / (state.running_var[c] as f64 + state.eps as f64).sqrt(),
            ),
        };
        inv_std[c] = inv as f32;
        let (g, b) = (state.gamma[c] as f64, state.beta[c] as f64);
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            let src = &input.data()[start..start + p];
            let xh = &mut x_hat.data_mut()[start..start + p];
            for (dst, &v) in xh.iter_mut().zip(src) {
                *dst = ((v as f64 - mean) * inv) as f32;
            }
            let o = &mut out.data_mut()[start..start + p];
            for (dst, &v) in o.iter_mut().zip(src) {
                *dst = (g * (v as f64 - mean) * inv + b) as f32;
            }
        }
    }
    Ok((
        out,
        BnCache {
            mode,
            x_hat,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

/// Backward batch norm for either mode.
///
/// Train mode differentiates through the batch mean and variance; eval mode is
/// a per-channel affine map.
pub fn batchnorm2d_grad(state: &BnState, cache: &BnCache, upstream: &Tensor) -> Result<BnGrads> {
    let s = upstream.shape();
    state.check(s.c)?;
    ensure_same_shape("batchnorm2d_grad", s, cache.x_hat.shape())?;
    let count = (s.n * s.plane()) as f64;
    let p = s.plane();
    let mut gin = Tensor::zeros(s);
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];

    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            let dy = &upstream.data()[start..start + p];
            let xh = &cache.x_hat.data()[start..start + p];
            for (&d, &x) in dy.iter().zip(xh) {
                sum_dy += d as f64;
                sum_dy_xh += d as f64 * x as f64;
            }
        }
        dgamma[c] = sum_dy_xh as f32;
        dbeta[c] = sum_dy as f32;
        let scale = state.gamma[c] as f64 * cache.inv_std[c] as f64;
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            for i in start..start + p {
                let d = upstream.data()[i] as f64;
                let g = match cache.mode {
                    BnMode::Train => {
                        let xh = cache.x_hat.data()[i] as f64;
                        scale * (d - sum_dy / count - xh * sum_dy_xh / count)
                    }
                    BnMode::Eval => scale * d,
                };
                gin.data_mut()[i] = g as f32;
            }
        }
    }
    Ok(BnGrads {
        input: gin,
        gamma: dgamma,
        beta: dbeta,
    })
}
