//! Analytic gradients of every differentiable op, every block and the whole
//! network against central finite differences.
//!
//! The analytic side is always the production backward pass. The numeric side
//! differentiates the f64 reference forward of the same function, so rounding
//! in the f32 forward does not swamp a step of 1e-3. Blocks and the network
//! also report how far the production forward is from the reference one, which
//! is what makes both sides the same function.
//!
//! Each gradient check probes the largest analytic entries plus a random
//! sample and reports the norm-wise relative error over those coordinates,
//! worst over all instances. Losses are `Σ y·r` for a fixed random `r`, so `r`
//! is the upstream gradient; the network uses the mean squared error instead.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtf_core::blocks::{LdBlock, Mlia, SharpnessBranch, Sppf, XFuse};
use rtf_core::network::{Model, NetworkConfig};
use rtf_core::params::{Grads, ParamId, ParamStore, Registry};
use rtf_core::tensor::*;
use rtf_core::train::mse_loss;
use rtf_core::{Shape, Tensor};

use crate::fd::{central, gather, pick_coords, rel_err, FD_STEP, FD_TOL};
use crate::reference::{self as refr, Arr};

/// Random instances per op.
pub const OP_INSTANCES: usize = 20;
/// Random instances per block.
pub const BLOCK_INSTANCES: usize = 3;
/// Largest accepted `max|production − reference| / max(1, max|reference|)`.
pub const FORWARD_TOL: f64 = 1e-5;

const TOP: usize = 6;
const RANDOM: usize = 10;
const NET_TOP: usize = 2;
const NET_RANDOM: usize = 2;

const NET_SCALE: f32 = 0.3;
const NET_BATCH: usize = 2;
const NET_SIDE: usize = 32;
/// Largest head residual, keeping every output clear of the clamp bounds.
const NET_RESIDUAL: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    /// Analytic against numeric gradient.
    Gradient,
    /// Production forward against the reference forward.
    Forward,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `subject/what`, e.g. `conv2d/weight`.
    pub name: String,
    pub kind: CheckKind,
    /// Worst over all instances.
    pub rel_err: f64,
    pub instances: usize,
    /// Coordinates probed over all instances.
    pub coords: usize,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

struct Checker {
    rng: ChaCha8Rng,
    out: Vec<GradCheck>,
}

impl Checker {
    /// Fold one instance into the check called `name`.
    fn record(&mut self, name: String, kind: CheckKind, err: f64, coords: usize, tol: f64) {
        // NaN must register as a failure
        let err = if err.is_nan() { f64::INFINITY } else { err };
        match self.out.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.rel_err = c.rel_err.max(err);
                c.instances += 1;
                c.coords += coords;
            }
            None => self.out.push(GradCheck {
                name,
                kind,
                rel_err: err,
                instances: 1,
                coords,
                tol,
            }),
        }
    }

    fn gradient(&mut self, name: String, analytic: &[f32], coords: &[usize], numeric: Vec<f64>) {
        let err = rel_err(&gather(analytic, coords), &numeric);
        self.record(name, CheckKind::Gradient, err, coords.len(), FD_TOL);
    }

    fn forward(&mut self, name: &str, got: &Tensor, want: &Arr) {
        let scale = want.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        self.record(
            format!("{name}/forward"),
            CheckKind::Forward,
            want.max_abs_diff(got) / scale,
            got.numel(),
            FORWARD_TOL,
        );
    }

    /// Gradient of `loss` w.r.t. a free tensor.
    fn tensor(&mut self, name: &str, x: &Tensor, analytic: &Tensor, loss: impl Fn(&Arr) -> f64) {
        assert_eq!(x.shape(), analytic.shape(), "{name}: gradient shape");
        let coords = pick_coords(analytic.data(), TOP, RANDOM, &mut self.rng);
        let mut state = x.clone();
        let numeric = central(
            &mut state,
            &coords,
            FD_STEP,
            |t| t.data_mut(),
            |t| loss(&Arr::from_tensor(t)),
        );
        self.gradient(name.to_string(), analytic.data(), &coords, numeric);
    }

    /// Gradient of `loss` w.r.t. a free vector.
    fn slice(&mut self, name: &str, x: &[f32], analytic: &[f32], loss: impl Fn(&[f64]) -> f64) {
        assert_eq!(x.len(), analytic.len(), "{name}: gradient length");
        let coords = pick_coords(analytic, TOP, RANDOM, &mut self.rng);
        let mut state = x.to_vec();
        let numeric = central(&mut state, &coords, FD_STEP, |v| v.as_mut_slice(), |v| loss(&widen(v)));
        self.gradient(name.to_string(), analytic, &coords, numeric);
    }

    /// Gradient of `loss` w.r.t. every learnable tensor in `store`.
    fn params(&mut self, subject: &str, store: &ParamStore, grads: &Grads, loss: impl Fn(&ParamStore) -> f64) {
        let ids: Vec<ParamId> = store.learnable_ids().collect();
        for id in ids {
            self.param(subject, store, grads, id, (TOP, RANDOM), &loss);
        }
    }

    fn param(
        &mut self,
        subject: &str,
        store: &ParamStore,
        grads: &Grads,
        id: ParamId,
        (top, random): (usize, usize),
        loss: &impl Fn(&ParamStore) -> f64,
    ) {
        let analytic = grads.get_or_zero(store, id);
        let coords = pick_coords(analytic.data(), top, random, &mut self.rng);
        let mut state = store.clone();
        let numeric = central(&mut state, &coords, FD_STEP, |s| s.get_mut(id).data_mut(), loss);
        self.gradient(
            format!("{subject}/{}", store.spec(id).name),
            analytic.data(),
            &coords,
            numeric,
        );
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn arr(t: &Tensor) -> Arr {
    Arr::from_tensor(t)
}

fn uniform<R: Rng>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

fn vec_uniform<R: Rng>(len: usize, lo: f32, hi: f32, rng: &mut R) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Distinct values at least `gap` apart, so max pooling has no near-ties.
fn spaced<R: Rng>(shape: Shape, gap: f32, rng: &mut R) -> Tensor {
    let mut ranks: Vec<usize> = (0..shape.numel()).collect();
    ranks.shuffle(rng);
    let mid = shape.numel() as f32 / 2.0;
    Tensor::from_vec(shape, ranks.into_iter().map(|r| (r as f32 - mid) * gap).collect())
}

/// Replace every learnable value with a uniform draw from `[-scale, scale]`.
pub fn randomize_learnables<R: Rng>(store: &mut ParamStore, scale: f32, rng: &mut R) {
    let ids: Vec<ParamId> = store.learnable_ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_conv_spec<R: Rng>(rng: &mut R) -> ConvSpec {
    let kernel = [1, 3, 5][rng.random_range(0..3)];
    let spec = match rng.random_range(0..3) {
        0 => ConvSpec::new(rng.random_range(1..=4), rng.random_range(1..=4), kernel),
        1 => ConvSpec::depthwise(rng.random_range(1..=4), kernel),
        _ => {
            let g = [2, 4][rng.random_range(0..2)];
            ConvSpec::new(g * rng.random_range(1..=2), g * rng.random_range(1..=2), kernel).with_groups(g)
        }
    };
    spec.with_stride(rng.random_range(1..=2))
        .with_padding(rng.random_range(0..=kernel / 2))
}

fn conv_checks(ck: &mut Checker) {
    for _ in 0..OP_INSTANCES {
        let rng = &mut ck.rng;
        let spec = random_conv_spec(rng);
        let min_side = spec.kernel_h.saturating_sub(2 * spec.padding).max(1);
        let shape = Shape::new(
            rng.random_range(1..=2),
            spec.in_channels,
            rng.random_range(min_side..=min_side + 5),
            rng.random_range(min_side..=min_side + 5),
        );
        let x = uniform(shape, -1.0, 1.0, rng);
        let w = uniform(spec.weight_shape(), -1.0, 1.0, rng);
        let b = vec_uniform(spec.out_channels, -1.0, 1.0, rng);
        let y = conv2d(&x, &w, Some(&b), &spec).expect("conv forward");
        let r = uniform(y.shape(), -1.0, 1.0, rng);
        let g = conv2d_grad(&x, &w, &spec, &r).expect("conv backward");
        let run = |x: &Arr, w: &Arr, b: &[f64]| refr::weighted_sum(&refr::conv2d(x, w, Some(b), &spec), &r);
        let (xa, wa, ba) = (arr(&x), arr(&w), widen(&b));
        ck.tensor("conv2d/input", &x, &g.input, |x| run(x, &wa, &ba));
        ck.tensor("conv2d/weight", &w, &g.weight, |w| run(&xa, w, &ba));
        ck.slice("conv2d/bias", &b, &g.bias.expect("bias gradient"), |b| run(&xa, &wa, b));
    }
}

/// `|a − n| / max(|a|, |n|)` at every coordinate, zero where both vanish.
fn per_coordinate(analytic: &[f32], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = f64::from(a);
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// A 1×2×5×5 input through a 3×3 convolution, judged coordinate by coordinate
/// over every entry rather than norm-wise over a sample.
fn conv_per_coordinate_checks(ck: &mut Checker) {
    let rng = &mut ck.rng;
    let spec = ConvSpec::new(2, 2, 3);
    let x = uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, rng);
    let w = uniform(spec.weight_shape(), -1.0, 1.0, rng);
    let b = vec_uniform(2, -1.0, 1.0, rng);
    let y = conv2d(&x, &w, Some(&b), &spec).expect("conv forward");
    let r = uniform(y.shape(), -1.0, 1.0, rng);
    let g = conv2d_grad(&x, &w, &spec, &r).expect("conv backward");
    let (wa, ba) = (arr(&w), widen(&b));
    let all: Vec<usize> = (0..x.numel()).collect();
    let mut state = x.clone();
    let numeric = central(
        &mut state,
        &all,
        FD_STEP,
        |t| t.data_mut(),
        |t| refr::weighted_sum(&refr::conv2d(&arr(t), &wa, Some(&ba), &spec), &r),
    );
    let err = per_coordinate(g.input.data(), &numeric);
    ck.record(
        "conv2d 1x2x5x5 per-coordinate/input".into(),
        CheckKind::Gradient,
        err,
        all.len(),
        FD_TOL,
    );
}

fn batchnorm_checks(ck: &mut Checker) {
    for mode in [BnMode::Train, BnMode::Eval] {
        let label = format!("batchnorm2d {mode:?}").to_lowercase();
        for _ in 0..OP_INSTANCES {
            let rng = &mut ck.rng;
            let c = rng.random_range(1..=4);
            let shape = Shape::new(
                rng.random_range(2..=3),
                c,
                rng.random_range(2..=5),
                rng.random_range(2..=5),
            );
            let x = uniform(shape, -2.0, 2.0, rng);
            let mut state = BnState::new(c);
            state.gamma = vec_uniform(c, 0.5, 1.5, rng);
            state.beta = vec_uniform(c, -0.5, 0.5, rng);
            state.running_mean = vec_uniform(c, -0.5, 0.5, rng);
            state.running_var = vec_uniform(c, 0.5, 2.0, rng);
            let (y, cache) = batchnorm2d_pure(&x, &state, mode).expect("bn forward");
            let r = uniform(y.shape(), -1.0, 1.0, rng);
            let g = batchnorm2d_grad(&state, &cache, &r).expect("bn backward");
            let (mean, var) = (widen(&state.running_mean), widen(&state.running_var));
            let run = |x: &Arr, gamma: &[f64], beta: &[f64]| {
                let y = match mode {
                    BnMode::Train => refr::batchnorm_train(x, gamma, beta),
                    BnMode::Eval => refr::batchnorm(x, gamma, beta, &mean, &var),
                };
                refr::weighted_sum(&y, &r)
            };
            let (xa, gamma, beta) = (arr(&x), widen(&state.gamma), widen(&state.beta));
            ck.tensor(&format!("{label}/input"), &x, &g.input, |x| run(x, &gamma, &beta));
            ck.slice(&format!("{label}/gamma"), &state.gamma, &g.gamma, |v| {
                run(&xa, v, &beta)
            });
            ck.slice(&format!("{label}/beta"), &state.beta, &g.beta, |v| run(&xa, &gamma, v));
        }
    }
}

fn random_shape<R: Rng>(rng: &mut R) -> Shape {
    Shape::new(
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    )
}

fn elementwise_checks(ck: &mut Checker) {
    for _ in 0..OP_INSTANCES {
        let mut data = ChaCha8Rng::seed_from_u64(ck.rng.random());
        let rng = &mut data;
        let s = random_shape(rng);
        let r = uniform(s, -1.0, 1.0, rng);

        let x = uniform(s, -3.0, 3.0, rng);
        let g = gelu_grad(&x, &r).expect("gelu backward");
        ck.tensor("gelu/input", &x, &g, |x| refr::weighted_sum(&refr::gelu(x), &r));

        let x = uniform(s, -4.0, 4.0, rng);
        let g = sigmoid_grad(&sigmoid(&x), &r).expect("sigmoid backward");
        ck.tensor("sigmoid/input", &x, &g, |x| refr::weighted_sum(&refr::sigmoid(x), &r));

        // every value at least 0.01 from a bound, ten steps clear of the kink
        let x = uniform(s, -0.5, 1.5, rng).map(|v| {
            let near = |b: f32| (v - b).abs() < 0.01;
            if near(0.0) || near(1.0) {
                v + 0.02
            } else {
                v
            }
        });
        let mut g = r.clone();
        for (d, &v) in g.data_mut().iter_mut().zip(x.data()) {
            if !(0.0..=1.0).contains(&v) {
                *d = 0.0;
            }
        }
        ck.tensor("clamp/input", &x, &g, |x| {
            refr::weighted_sum(&refr::clamp(x, 0.0, 1.0), &r)
        });

        let a = uniform(s, -1.0, 1.0, rng);
        let b = uniform(s, -1.0, 1.0, rng);
        let (aa, ba) = (arr(&a), arr(&b));
        // d(a + b)/da and d(a + b)/db are both the identity
        ck.tensor("add/lhs", &a, &r, |a| refr::weighted_sum(&refr::add(a, &ba), &r));
        ck.tensor("add/rhs", &b, &r, |b| refr::weighted_sum(&refr::add(&aa, b), &r));

        let x = uniform(s, -1.0, 1.0, rng);
        let xa = arr(&x);
        let rp = uniform(Shape::new(s.n, s.c, 1, 1), -1.0, 1.0, rng);
        let g = global_avg_pool_grad(s, &rp).expect("gap backward");
        ck.tensor("global_avg_pool/input", &x, &g, |x| {
            refr::weighted_sum(&refr::global_avg_pool(x), &rp)
        });

        let gate = uniform(Shape::new(s.n, s.c, 1, 1), 0.1, 0.9, rng);
        let ga = arr(&gate);
        let (gx, gg) = mul_broadcast_grad(&x, &gate, &r).expect("mul backward");
        ck.tensor("mul_broadcast/input", &x, &gx, |x| {
            refr::weighted_sum(&refr::mul_broadcast(x, &ga), &r)
        });
        ck.tensor("mul_broadcast/gate", &gate, &gg, |g| {
            refr::weighted_sum(&refr::mul_broadcast(&xa, g), &r)
        });

        let gain = vec_uniform(s.c, -1.0, 1.0, rng);
        let gw = widen(&gain);
        let (gx, ggain) = scale_channels_grad(&x, &gain, &r).expect("scale backward");
        ck.tensor("scale_channels/input", &x, &gx, |x| {
            refr::weighted_sum(&refr::scale_channels(x, &gw), &r)
        });
        ck.slice("scale_channels/gain", &gain, &ggain, |g| {
            refr::weighted_sum(&refr::scale_channels(&xa, g), &r)
        });

        let (c1, c2) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let p = uniform(Shape::new(s.n, c1, s.h, s.w), -1.0, 1.0, rng);
        let q = uniform(Shape::new(s.n, c2, s.h, s.w), -1.0, 1.0, rng);
        let (pa, qa) = (arr(&p), arr(&q));
        let rc = uniform(Shape::new(s.n, c1 + c2, s.h, s.w), -1.0, 1.0, rng);
        let parts = split_channels(&rc, &[c1, c2]).expect("split");
        ck.tensor("concat_channels/first", &p, &parts[0], |p| {
            refr::weighted_sum(&refr::concat_channels(&[p, &qa]), &rc)
        });
        ck.tensor("concat_channels/second", &q, &parts[1], |q| {
            refr::weighted_sum(&refr::concat_channels(&[&pa, q]), &rc)
        });

        // slice_channels' adjoint scatters into the sliced range
        let start = rng.random_range(0..c2);
        let len = rng.random_range(1..=c2 - start);
        let rs = uniform(Shape::new(s.n, len, s.h, s.w), -1.0, 1.0, rng);
        let mut up = Tensor::zeros(q.shape());
        for n in 0..s.n {
            for c in 0..len {
                for y in 0..s.h {
                    for x in 0..s.w {
                        up.set(n, start + c, y, x, rs.at(n, c, y, x));
                    }
                }
            }
        }
        ck.tensor("slice_channels/input", &q, &up, |q| {
            refr::weighted_sum(&refr::slice_channels(q, start, len), &rs)
        });

        let pred = uniform(s, 0.0, 1.0, rng);
        let target = uniform(s, 0.0, 1.0, rng);
        let (_, g) = mse_loss(&pred, &target).expect("mse");
        ck.tensor("mse_loss/pred", &pred, &g, |p| refr::mse(p, &target));
    }
}

fn resize_checks(ck: &mut Checker) {
    for i in 0..OP_INSTANCES {
        let rng = &mut ck.rng;
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (oh, ow) = match i % 3 {
            0 => ((h / 2).max(1), (w / 2).max(1)),
            1 => (2 * h, 2 * w),
            _ => (rng.random_range(1..=9), rng.random_range(1..=9)),
        };
        let x = uniform(
            Shape::new(rng.random_range(1..=2), rng.random_range(1..=3), h, w),
            -1.0,
            1.0,
            rng,
        );
        let r = uniform(Shape::new(x.shape().n, x.shape().c, oh, ow), -1.0, 1.0, rng);
        let g = bilinear_resize_grad(x.shape(), &r).expect("resize backward");
        ck.tensor("bilinear_resize/input", &x, &g, |x| {
            refr::weighted_sum(&refr::bilinear_resize(x, oh, ow), &r)
        });
    }
}

fn pool_checks(ck: &mut Checker) {
    for i in 0..OP_INSTANCES {
        let rng = &mut ck.rng;
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
            rng.random_range(1..=3),
            rng.random_range(min_side..=min_side + 6),
            rng.random_range(min_side..=min_side + 6),
        );
        // spacing 10x the step keeps every window's winner fixed under perturbation
        let x = spaced(shape, 0.01, rng);
        let y = maxpool2d(&x, &spec).expect("pool forward");
        let r = uniform(y.shape(), -1.0, 1.0, rng);
        let g = maxpool2d_grad(&x, &spec, &r).expect("pool backward");
        ck.tensor("maxpool2d/input", &x, &g, |x| {
            refr::weighted_sum(&refr::maxpool2d(x, &spec), &r)
        });
    }
}

fn store_for<T>(seed: u64, scale: f32, register: impl FnOnce(&mut Registry) -> T) -> (T, ParamStore) {
    let mut reg = Registry::new();
    let block = register(&mut reg);
    let mut store = ParamStore::initialize(reg.into_specs(), seed);
    randomize_learnables(&mut store, scale, &mut ChaCha8Rng::seed_from_u64(seed));
    (block, store)
}

/// Blocks run at width 4 on 8×8 maps with batch 2.
const BLOCK_DIM: usize = 4;
const BLOCK_SIDE: usize = 8;

fn block_input<R: Rng>(c: usize, side: usize, rng: &mut R) -> Tensor {
    uniform(Shape::new(2, c, side, side), -1.0, 1.0, rng)
}

fn sn_checks(ck: &mut Checker) {
    for k in 0..BLOCK_INSTANCES as u64 {
        let (sn, store) = store_for(10 + k, 1.0, |r| SharpnessBranch::register(r, "sn", BLOCK_DIM));
        let x = block_input(BLOCK_DIM, BLOCK_SIDE, &mut ck.rng);
        let y = sn.forward(&store, &x).expect("sn forward");
        ck.forward("sn", &y, &refr::sharpness(&store, &sn, &arr(&x)));
        let r = uniform(x.shape(), -1.0, 1.0, &mut ck.rng);
        let mut g = Grads::new(&store);
        let dx = sn.backward(&store, &x, &r, &mut g).expect("sn backward");
        let run = |p: &ParamStore, x: &Arr| refr::weighted_sum(&refr::sharpness(p, &sn, x), &r);
        let xa = arr(&x);
        ck.tensor("sn/input", &x, &dx, |x| run(&store, x));
        ck.params("sn", &store, &g, |p| run(p, &xa));
    }
}

fn ld_checks(ck: &mut Checker) {
    for with_sn in [true, false] {
        let label = if with_sn { "ld+sn" } else { "ld" };
        for k in 0..BLOCK_INSTANCES as u64 {
            let (ld, store) = store_for(20 + k, 1.0, |r| LdBlock::register(r, "ld", BLOCK_DIM, with_sn));
            let x = block_input(BLOCK_DIM, BLOCK_SIDE, &mut ck.rng);
            let (y, cache) = ld.forward_train(&mut store.clone(), &x).expect("ld forward");
            ck.forward(label, &y, &refr::ld(&store, &ld, &arr(&x)));
            let r = uniform(y.shape(), -1.0, 1.0, &mut ck.rng);
            let mut g = Grads::new(&store);
            let dx = ld.backward(&store, &cache, &r, &mut g).expect("ld backward");
            let run = |p: &ParamStore, x: &Arr| refr::weighted_sum(&refr::ld(p, &ld, x), &r);
            let xa = arr(&x);
            ck.tensor(&format!("{label}/input"), &x, &dx, |x| run(&store, x));
            ck.params(label, &store, &g, |p| run(p, &xa));
        }
    }
}

/// Smallest top-two gap in every pooling window of an SPPF instance. Inputs
/// and weights are bounded by 1 and the step is 1e-3, so no probe moves a pooled
/// value by more than 1e-3 and a gap of 2e-3 already keeps every winner; twice
/// that leaves headroom.
const SPPF_MARGIN: f64 = 4e-3;
const SPPF_DRAWS: usize = 10_000;

/// Draw SPPF instances until one keeps every max-pool winner fixed under the
/// probes, since central differences across a pooling kink are meaningless.
fn stable_sppf<R: Rng>(rng: &mut R) -> (Sppf, ParamStore, Tensor) {
    for _ in 0..SPPF_DRAWS {
        let seed = rng.random();
        let (sppf, store) = store_for(seed, 1.0, |r| Sppf::register(r, "sppf", BLOCK_DIM).expect("sppf"));
        let x = block_input(BLOCK_DIM, BLOCK_SIDE, rng);
        let pyramid = refr::sppf_pyramid(&store, &sppf, &arr(&x));
        if pyramid[..3]
            .iter()
            .all(|level| refr::pool_margin(level, &sppf.pool) > SPPF_MARGIN)
        {
            return (sppf, store, x);
        }
    }
    panic!("no SPPF instance with pooling margin {SPPF_MARGIN} in {SPPF_DRAWS} draws");
}

fn sppf_checks(ck: &mut Checker) {
    for _ in 0..BLOCK_INSTANCES {
        let (sppf, store, x) = stable_sppf(&mut ck.rng);
        let (y, cache) = sppf.forward_train(&store, &x).expect("sppf forward");
        ck.forward("sppf", &y, &refr::sppf(&store, &sppf, &arr(&x)));
        let r = uniform(y.shape(), -1.0, 1.0, &mut ck.rng);
        let mut g = Grads::new(&store);
        let dx = sppf.backward(&store, &cache, &r, &mut g).expect("sppf backward");
        let run = |p: &ParamStore, x: &Arr| refr::weighted_sum(&refr::sppf(p, &sppf, x), &r);
        let xa = arr(&x);
        ck.tensor("sppf/input", &x, &dx, |x| run(&store, x));
        ck.params("sppf", &store, &g, |p| run(p, &xa));
    }
}

fn mlia_checks(ck: &mut Checker) {
    // distinct widths catch stage/projection mix-ups; the shared stage is the
    // third, as in the network
    let channels = [2, 3, 4, 5];
    for k in 0..BLOCK_INSTANCES as u64 {
        let (mlia, store) = store_for(40 + k, 1.0, |r| {
            Mlia::register(r, "mlia", &channels, BLOCK_DIM, BLOCK_DIM, 2).expect("mlia")
        });
        let stages: Vec<Tensor> = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| block_input(c, BLOCK_SIDE >> i, &mut ck.rng))
            .collect();
        let refs: Vec<&Tensor> = stages.iter().collect();
        let arrs: Vec<Arr> = stages.iter().map(arr).collect();
        let arr_refs: Vec<&Arr> = arrs.iter().collect();
        let (y, cache) = mlia.forward_train(&store, &refs).expect("mlia forward");
        ck.forward("mlia", &y, &refr::mlia(&store, &mlia, &arr_refs));
        let r = uniform(y.shape(), -1.0, 1.0, &mut ck.rng);
        let mut g = Grads::new(&store);
        let dstages = mlia.backward(&store, &cache, &r, &mut g).expect("mlia backward");
        let run = |p: &ParamStore, stages: &[&Arr]| refr::weighted_sum(&refr::mlia(p, &mlia, stages), &r);
        for i in 0..stages.len() {
            ck.tensor(&format!("mlia/stage{i}"), &stages[i], &dstages[i], |t| {
                let mut v = arr_refs.clone();
                v[i] = t;
                run(&store, &v)
            });
        }
        ck.params("mlia", &store, &g, |p| run(p, &arr_refs));
    }
}

fn xfuse_checks(ck: &mut Checker) {
    for k in 0..BLOCK_INSTANCES as u64 {
        let (xf, store) = store_for(50 + k, 1.0, |r| XFuse::register(r, "xfuse", BLOCK_DIM).expect("xfuse"));
        let rng = &mut ck.rng;
        let up = block_input(BLOCK_DIM, BLOCK_SIDE, rng);
        let skip = block_input(BLOCK_DIM, BLOCK_SIDE, rng);
        let blur = uniform(Shape::new(2, 3, 2 * BLOCK_SIDE, 2 * BLOCK_SIDE), 0.0, 1.0, rng);
        let (ua, sa, ba) = (arr(&up), arr(&skip), arr(&blur));
        let (y, cache) = xf.forward_train(&store, &up, &skip, &blur).expect("xfuse forward");
        ck.forward("xfuse", &y, &refr::xfuse(&store, &xf, &ua, &sa, &ba));
        let r = uniform(y.shape(), -1.0, 1.0, &mut ck.rng);
        let mut g = Grads::new(&store);
        let dg = xf.backward(&store, &cache, &r, &mut g).expect("xfuse backward");
        let run = |p: &ParamStore, u: &Arr, s: &Arr, b: &Arr| refr::weighted_sum(&refr::xfuse(p, &xf, u, s, b), &r);
        ck.tensor("xfuse/up", &up, &dg.up, |t| run(&store, t, &sa, &ba));
        ck.tensor("xfuse/skip", &skip, &dg.skip, |t| run(&store, &ua, t, &ba));
        ck.tensor("xfuse/blur", &blur, &dg.blur, |t| run(&store, &ua, &sa, t));
        ck.params("xfuse", &store, &g, |p| run(p, &ua, &sa, &ba));
    }
}

/// Mean squared error through the whole width-4 network, spot-checked on every
/// learnable tensor. All learnables are randomized, then the head is scaled so
/// no output comes near a clamp bound.
fn network_checks(ck: &mut Checker) {
    let mut model = Model::build(&NetworkConfig::tiny(4), 6).expect("build");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    randomize_learnables(&mut model.params, NET_SCALE, &mut rng);
    let blur = uniform(Shape::new(NET_BATCH, 3, NET_SIDE, NET_SIDE), 0.3, 0.7, &mut rng);
    let target = uniform(blur.shape(), 0.0, 1.0, &mut rng);
    let (y, _) = model.clone().forward_train(&blur).expect("network forward");
    let residual = y
        .data()
        .iter()
        .zip(blur.data())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    if residual > NET_RESIDUAL {
        let head = model.network.head.clone();
        let factor = NET_RESIDUAL / residual;
        for id in std::iter::once(head.weight).chain(head.bias) {
            for v in model.params.get_mut(id).data_mut() {
                *v *= factor;
            }
        }
    }

    let (y, cache) = model.clone().forward_train(&blur).expect("network forward");
    let ba = arr(&blur);
    ck.forward("network", &y, &refr::network(&model.params, &model.network, &ba));
    let (_, dy) = mse_loss(&y, &target).expect("mse");
    let g = model.backward(&cache, &dy).expect("network backward");
    let run = |p: &ParamStore| refr::mse(&refr::network(p, &model.network, &ba), &target);
    let ids: Vec<ParamId> = model.params.learnable_ids().collect();
    for id in ids {
        ck.param("network", &model.params, &g, id, (NET_TOP, NET_RANDOM), &run);
    }
}

/// Every op check.
pub fn op_checks(seed: u64) -> Vec<GradCheck> {
    let mut ck = Checker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    conv_checks(&mut ck);
    conv_per_coordinate_checks(&mut ck);
    batchnorm_checks(&mut ck);
    elementwise_checks(&mut ck);
    resize_checks(&mut ck);
    pool_checks(&mut ck);
    ck.out
}

/// Every block check, forward agreement included.
pub fn block_checks(seed: u64) -> Vec<GradCheck> {
    let mut ck = Checker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    sn_checks(&mut ck);
    ld_checks(&mut ck);
    sppf_checks(&mut ck);
    mlia_checks(&mut ck);
    xfuse_checks(&mut ck);
    ck.out
}

/// Whole-network spot checks, forward agreement included.
pub fn network_gradient_checks(seed: u64) -> Vec<GradCheck> {
    let mut ck = Checker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    network_checks(&mut ck);
    ck.out
}
