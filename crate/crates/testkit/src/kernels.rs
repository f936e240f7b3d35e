//! Production kernels against [`crate::reference`] over randomized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtf_core::tensor::{batchnorm2d, bilinear_resize, conv2d, maxpool2d, BnMode, BnState, ConvSpec, PoolSpec};
use rtf_core::{Shape, Tensor};

use crate::reference::{self as refr, Arr};

/// Max-abs tolerance between a kernel and its oracle.
pub const KERNEL_TOL: f64 = 1e-5;
/// Randomized instances per kernel.
pub const KERNEL_INSTANCES: usize = 200;

#[derive(Clone, Debug)]
pub struct KernelOutcome {
    pub kernel: &'static str,
    pub instances: usize,
    /// Largest max-abs difference over all instances.
    pub worst: f64,
    /// Description of the instance that produced `worst`.
    pub worst_case: String,
}

impl KernelOutcome {
    pub fn passed(&self) -> bool {
        self.instances >= KERNEL_INSTANCES && self.worst <= KERNEL_TOL
    }
}

struct Tracker {
    kernel: &'static str,
    instances: usize,
    worst: f64,
    worst_case: String,
}

impl Tracker {
    fn new(kernel: &'static str) -> Self {
        Tracker {
            kernel,
            instances: 0,
            worst: 0.0,
            worst_case: String::new(),
        }
    }

    fn record(&mut self, diff: f64, case: impl FnOnce() -> String) {
        self.instances += 1;
        // NaN must register as a failure
        if diff.is_nan() || diff > self.worst {
            self.worst = if diff.is_nan() { f64::INFINITY } else { diff };
            self.worst_case = case();
        }
    }

    fn done(self) -> KernelOutcome {
        KernelOutcome {
            kernel: self.kernel,
            instances: self.instances,
            worst: self.worst,
            worst_case: self.worst_case,
        }
    }
}

fn max_abs(got: &Tensor, want: &Arr) -> f64 {
    want.max_abs_diff(got)
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn uniform<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

fn vec_uniform<R: Rng>(len: usize, lo: f32, hi: f32, rng: &mut R) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Dense, depthwise and grouped convolutions with kernels 1, 3 and 5, strides
/// 1 and 2, and every legal zero padding.
pub fn conv_suite(seed: u64) -> KernelOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("conv2d");
    for _ in 0..KERNEL_INSTANCES {
        let kernel = [1, 3, 5][rng.random_range(0..3)];
        let (in_c, out_c, groups) = match rng.random_range(0..3) {
            0 => (rng.random_range(1..=6), rng.random_range(1..=6), 1),
            1 => {
                let c = rng.random_range(1..=8);
                (c, c, c)
            }
            _ => {
                let g = [2, 4][rng.random_range(0..2)];
                (g * rng.random_range(1..=3), g * rng.random_range(1..=3), g)
            }
        };
        let spec = ConvSpec {
            in_channels: in_c,
            out_channels: out_c,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=kernel / 2),
            groups,
            has_bias: rng.random_bool(0.5),
        };
        let min_side = kernel.saturating_sub(2 * spec.padding).max(1);
        let shape = Shape::new(
            rng.random_range(1..=2),
            in_c,
            rng.random_range(min_side..=min_side + 9),
            rng.random_range(min_side..=min_side + 9),
        );
        let x = uniform(shape, &mut rng);
        let w = uniform(spec.weight_shape(), &mut rng);
        let b = spec.has_bias.then(|| vec_uniform(out_c, -1.0, 1.0, &mut rng));
        let got = conv2d(&x, &w, b.as_deref(), &spec);
        let diff = match &got {
            Ok(y) => max_abs(
                y,
                &refr::conv2d(
                    &Arr::from_tensor(&x),
                    &Arr::from_tensor(&w),
                    b.as_deref().map(widen).as_deref(),
                    &spec,
                ),
            ),
            Err(_) => f64::INFINITY,
        };
        t.record(diff, || format!("{spec:?} on {shape}"));
    }
    t.done()
}

/// Odd windows 1, 3 and 5 with strides 1 and 2, always including the SPPF pool.
pub fn maxpool_suite(seed: u64) -> KernelOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("maxpool2d");
    for i in 0..KERNEL_INSTANCES {
        let spec = if i % 2 == 0 {
            PoolSpec::SPPF
        } else {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            PoolSpec {
                kernel,
                stride: rng.random_range(1..=2),
                padding: rng.random_range(0..=kernel / 2),
            }
        };
        let min_side = spec.kernel.saturating_sub(2 * spec.padding).max(1);
        let shape = Shape::new(
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(min_side..=min_side + 10),
            rng.random_range(min_side..=min_side + 10),
        );
        let mut x = uniform(shape, &mut rng);
        if rng.random_bool(0.3) {
            // coarse values force ties
            x = x.map(|v| (v * 3.0).round());
        }
        let diff = match maxpool2d(&x, &spec) {
            Ok(y) => max_abs(&y, &refr::maxpool2d(&Arr::from_tensor(&x), &spec)),
            Err(_) => f64::INFINITY,
        };
        t.record(diff, || format!("{spec:?} on {shape}"));
    }
    t.done()
}

/// Train mode (output and updated running statistics) and eval mode, alternating.
pub fn batchnorm_suite(seed: u64) -> KernelOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("batchnorm2d");
    for i in 0..KERNEL_INSTANCES {
        let shape = Shape::new(
            rng.random_range(1..=3),
            rng.random_range(1..=6),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let c = shape.c;
        // an offset and spread keep the normalization non-trivial
        let offset = rng.random_range(-2.0..2.0f32);
        let spread = rng.random_range(0.1..3.0f32);
        let x = uniform(shape, &mut rng).map(|v| offset + spread * v);
        let mut state = BnState::new(c);
        state.gamma = vec_uniform(c, 0.5, 1.5, &mut rng);
        state.beta = vec_uniform(c, -0.5, 0.5, &mut rng);
        state.running_mean = vec_uniform(c, -1.0, 1.0, &mut rng);
        state.running_var = vec_uniform(c, 0.2, 2.0, &mut rng);
        let train = i % 2 == 0;
        let before = state.clone();
        let diff = if train {
            match batchnorm2d(&x, &mut state, BnMode::Train) {
                Ok((y, _)) => {
                    let xa = Arr::from_tensor(&x);
                    let (mean, var, unbiased) = refr::batch_stats(&xa);
                    let want = refr::batchnorm(&xa, &widen(&before.gamma), &widen(&before.beta), &mean, &var);
                    let m = f64::from(before.momentum);
                    let blend = |old: &[f32], new: &[f64]| -> Vec<f64> {
                        old.iter()
                            .zip(new)
                            .map(|(&o, &b)| (1.0 - m) * f64::from(o) + m * b)
                            .collect()
                    };
                    let stats = state
                        .running_mean
                        .iter()
                        .zip(&blend(&before.running_mean, &mean))
                        .chain(state.running_var.iter().zip(&blend(&before.running_var, &unbiased)))
                        .map(|(&a, &b)| (f64::from(a) - b).abs())
                        .fold(0.0, f64::max);
                    max_abs(&y, &want).max(stats)
                }
                Err(_) => f64::INFINITY,
            }
        } else {
            match batchnorm2d(&x, &mut state, BnMode::Eval) {
                Ok((y, _)) if state == before => max_abs(
                    &y,
                    &refr::batchnorm(
                        &Arr::from_tensor(&x),
                        &widen(&before.gamma),
                        &widen(&before.beta),
                        &widen(&before.running_mean),
                        &widen(&before.running_var),
                    ),
                ),
                _ => f64::INFINITY,
            }
        };
        t.record(diff, || {
            format!("{} mode on {shape}", if train { "train" } else { "eval" })
        });
    }
    t.done()
}

/// Down-, up- and non-integer-ratio resizes, including the ×0.5 and ×2 the
/// network uses.
pub fn resize_suite(seed: u64) -> KernelOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("bilinear_resize");
    for i in 0..KERNEL_INSTANCES {
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let (oh, ow) = match i % 3 {
            0 => ((h / 2).max(1), (w / 2).max(1)),
            1 => (2 * h, 2 * w),
            _ => (rng.random_range(1..=16), rng.random_range(1..=16)),
        };
        let shape = Shape::new(rng.random_range(1..=2), rng.random_range(1..=4), h, w);
        let x = uniform(shape, &mut rng);
        let diff = match bilinear_resize(&x, oh, ow) {
            Ok(y) => max_abs(&y, &refr::bilinear_resize(&Arr::from_tensor(&x), oh, ow)),
            Err(_) => f64::INFINITY,
        };
        t.record(diff, || format!("{shape} -> {oh}x{ow}"));
    }
    t.done()
}

pub fn all_kernel_suites(seed: u64) -> Vec<KernelOutcome> {
    vec![
        conv_suite(seed),
        maxpool_suite(seed.wrapping_add(1)),
        batchnorm_suite(seed.wrapping_add(2)),
        resize_suite(seed.wrapping_add(3)),
    ]
}
