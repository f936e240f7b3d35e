//! Direct-definition forward passes in f64, for single ops, blocks and the
//! whole network.
//!
//! Slow on purpose: each op is the textbook formula with no lowering, tiling or
//! separability tricks. Blocks and the network reuse the production layer
//! graph (which parameter feeds which layer, conv shapes) but none of its
//! arithmetic. Evaluating a loss through these keeps central differences free
//! of f32 rounding noise.

use rtf_core::blocks::{Conv, LdBlock, Mlia, SharpnessBranch, Sppf, XFuse, LAPLACIAN};
use rtf_core::network::Network;
use rtf_core::params::ParamStore;
use rtf_core::tensor::{ConvSpec, PoolSpec};
use rtf_core::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// An NCHW array of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(shape: Shape) -> Self {
        Arr {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Arr {
            shape: t.shape(),
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.shape, self.data.iter().map(|&v| v as f32).collect())
    }

    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest `|self − t|` over all entries, infinite on a shape mismatch.
    pub fn max_abs_diff(&self, t: &Tensor) -> f64 {
        if self.shape != t.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - f64::from(b)).abs())
            .fold(0.0, f64::max)
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// `Σ y·r`.
pub fn weighted_sum(y: &Arr, r: &Tensor) -> f64 {
    assert_eq!(y.shape, r.shape(), "weighted_sum shapes");
    y.data.iter().zip(r.data()).map(|(&a, &b)| a * f64::from(b)).sum()
}

/// Mean squared difference.
pub fn mse(y: &Arr, target: &Tensor) -> f64 {
    assert_eq!(y.shape, target.shape(), "mse shapes");
    let sum: f64 = y
        .data
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - f64::from(b)).powi(2))
        .sum();
    sum / y.data.len() as f64
}

/// `out[n,o,y,x] = b[o] + Σ_{i,ky,kx} w[o,i,ky,kx] · in[n, g·in_pg + i, y·s + ky − p, x·s + kx − p]`
/// with zero padding.
pub fn conv2d(input: &Arr, weight: &Arr, bias: Option<&[f64]>, spec: &ConvSpec) -> Arr {
    let s = input.shape;
    let (kh, kw, st, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding as isize);
    let oh = (s.h + 2 * spec.padding - kh) / st + 1;
    let ow = (s.w + 2 * spec.padding - kw) / st + 1;
    let in_pg = spec.in_channels / spec.groups;
    let out_pg = spec.out_channels / spec.groups;
    let mut out = Arr::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            let g = o / out_pg;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for i in 0..in_pg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * st + ky) as isize - pad;
                                let ix = (x * st + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc += weight.at(o, i, ky, kx) * input.at(n, g * in_pg + i, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(n, o, y, x, acc);
                }
            }
        }
    }
    out
}

/// Max over each window of an explicitly −∞-padded copy of the input.
pub fn maxpool2d(input: &Arr, spec: &PoolSpec) -> Arr {
    let s = input.shape;
    let p = spec.padding;
    let (ph, pw) = (s.h + 2 * p, s.w + 2 * p);
    let oh = (ph - spec.kernel) / spec.stride + 1;
    let ow = (pw - spec.kernel) / spec.stride + 1;
    let mut out = Arr::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let mut padded = vec![f64::NEG_INFINITY; ph * pw];
            for y in 0..s.h {
                for x in 0..s.w {
                    padded[(y + p) * pw + x + p] = input.at(n, c, y, x);
                }
            }
            for y in 0..oh {
                for x in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            m = m.max(padded[(y * spec.stride + ky) * pw + x * spec.stride + kx]);
                        }
                    }
                    out.set(n, c, y, x, m);
                }
            }
        }
    }
    out
}

/// Smallest gap between a window's maximum and the largest value strictly below
/// it, over every window; infinite when no window has two distinct values.
/// Perturbations smaller than half of it cannot change any winner.
pub fn pool_margin(input: &Arr, spec: &PoolSpec) -> f64 {
    let s = input.shape;
    let p = spec.padding as isize;
    let oh = (s.h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    let ow = (s.w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    let mut margin = f64::INFINITY;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut window = Vec::new();
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            let iy = (y * spec.stride + ky) as isize - p;
                            let ix = (x * spec.stride + kx) as isize - p;
                            if iy >= 0 && ix >= 0 && iy < s.h as isize && ix < s.w as isize {
                                window.push(input.at(n, c, iy as usize, ix as usize));
                            }
                        }
                    }
                    let top = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let second = window
                        .iter()
                        .copied()
                        .filter(|&v| v < top)
                        .fold(f64::NEG_INFINITY, f64::max);
                    margin = margin.min(top - second);
                }
            }
        }
    }
    margin
}

/// Per-channel batch statistics: mean, biased variance, unbiased variance.
pub fn batch_stats(input: &Arr) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = input.shape;
    let count = (s.n * s.h * s.w) as f64;
    let (mut means, mut vars, mut unbiased) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..s.c {
        let values: Vec<f64> = (0..s.n)
            .flat_map(|n| (0..s.h).flat_map(move |y| (0..s.w).map(move |x| (n, y, x))))
            .map(|(n, y, x)| input.at(n, c, y, x))
            .collect();
        let mean = values.iter().sum::<f64>() / count;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        means.push(mean);
        vars.push(ss / count);
        unbiased.push(if count > 1.0 { ss / (count - 1.0) } else { ss / count });
    }
    (means, vars, unbiased)
}

/// `γ·(x − mean)/√(var + eps) + β` per channel.
pub fn batchnorm(input: &Arr, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Arr {
    let s = input.shape;
    let mut out = Arr::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let inv = 1.0 / (var[c] + BN_EPS).sqrt();
            for y in 0..s.h {
                for x in 0..s.w {
                    out.set(n, c, y, x, gamma[c] * (input.at(n, c, y, x) - mean[c]) * inv + beta[c]);
                }
            }
        }
    }
    out
}

/// Batch norm normalized by the statistics of `input` itself.
pub fn batchnorm_train(input: &Arr, gamma: &[f64], beta: &[f64]) -> Arr {
    let (mean, var, _) = batch_stats(input);
    batchnorm(input, gamma, beta, &mean, &var)
}

/// Bilinear resampling written as a tent-filter sum over every input pixel:
/// `out[i,j] = Σ_{y,x} tri(sy(i) − y) · tri(sx(j) − x) · in[y,x]` with
/// `s(i) = clamp((i + ½)·in/out − ½, 0, in − 1)` and `tri(t) = max(0, 1 − |t|)`.
pub fn bilinear_resize(input: &Arr, oh: usize, ow: usize) -> Arr {
    let s = input.shape;
    let src = |i: usize, n_in: usize, n_out: usize| {
        ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64)
    };
    let tri = |t: f64| (1.0 - t.abs()).max(0.0);
    let mut out = Arr::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..oh {
                let sy = src(i, s.h, oh);
                for j in 0..ow {
                    let sx = src(j, s.w, ow);
                    let mut acc = 0.0;
                    for y in 0..s.h {
                        let wy = tri(sy - y as f64);
                        if wy == 0.0 {
                            continue;
                        }
                        for x in 0..s.w {
                            acc += wy * tri(sx - x as f64) * input.at(n, c, y, x);
                        }
                    }
                    out.set(n, c, i, j, acc);
                }
            }
        }
    }
    out
}

/// `x·Φ(x)` with the exact normal CDF.
pub fn gelu(x: &Arr) -> Arr {
    x.map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}

pub fn sigmoid(x: &Arr) -> Arr {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn clamp(x: &Arr, lo: f64, hi: f64) -> Arr {
    x.map(|v| v.clamp(lo, hi))
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    assert_eq!(a.shape, b.shape, "add shapes");
    Arr {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

/// Spatial mean per `(n, c)`, shaped `N×C×1×1`.
pub fn global_avg_pool(x: &Arr) -> Arr {
    let s = x.shape;
    let mut out = Arr::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0.0;
            for y in 0..s.h {
                for w in 0..s.w {
                    acc += x.at(n, c, y, w);
                }
            }
            out.set(n, c, 0, 0, acc / (s.h * s.w) as f64);
        }
    }
    out
}

/// `x[n,c,·,·] · gate[n,c]`.
pub fn mul_broadcast(x: &Arr, gate: &Arr) -> Arr {
    let s = x.shape;
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for w in 0..s.w {
                    out.set(n, c, y, w, x.at(n, c, y, w) * gate.at(n, c, 0, 0));
                }
            }
        }
    }
    out
}

/// `x[·,c,·,·] · gain[c]`.
pub fn scale_channels(x: &Arr, gain: &[f64]) -> Arr {
    let s = x.shape;
    let mut out = x.clone();
    for n in 0..s.n {
        for (c, &g) in gain.iter().enumerate().take(s.c) {
            for y in 0..s.h {
                for w in 0..s.w {
                    out.set(n, c, y, w, x.at(n, c, y, w) * g);
                }
            }
        }
    }
    out
}

pub fn concat_channels(parts: &[&Arr]) -> Arr {
    let s = parts[0].shape;
    let total: usize = parts.iter().map(|p| p.shape.c).sum();
    let mut out = Arr::zeros(Shape::new(s.n, total, s.h, s.w));
    for n in 0..s.n {
        let mut base = 0;
        for p in parts {
            for c in 0..p.shape.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        out.set(n, base + c, y, x, p.at(n, c, y, x));
                    }
                }
            }
            base += p.shape.c;
        }
    }
    out
}

pub fn slice_channels(x: &Arr, start: usize, len: usize) -> Arr {
    let s = x.shape;
    let mut out = Arr::zeros(Shape::new(s.n, len, s.h, s.w));
    for n in 0..s.n {
        for c in 0..len {
            for y in 0..s.h {
                for w in 0..s.w {
                    out.set(n, c, y, w, x.at(n, start + c, y, w));
                }
            }
        }
    }
    out
}

/// A stored convolution layer.
pub fn conv_layer(p: &ParamStore, conv: &Conv, x: &Arr) -> Arr {
    let bias = conv.bias.map(|b| widen(p.values(b)));
    conv2d(x, &Arr::from_tensor(p.get(conv.weight)), bias.as_deref(), &conv.spec)
}

/// Fixed Laplacian per channel, scaled by the learned gain.
pub fn sharpness(p: &ParamStore, sn: &SharpnessBranch, x: &Arr) -> Arr {
    let c = x.shape.c;
    let kernel = Arr {
        shape: Shape::new(c, 1, 3, 3),
        data: LAPLACIAN.iter().cycle().take(9 * c).map(|&v| f64::from(v)).collect(),
    };
    let spec = ConvSpec::depthwise(c, 3).without_bias();
    scale_channels(&conv2d(x, &kernel, None, &spec), &widen(p.values(sn.gain)))
}

/// Train-mode LD block: batch norm uses the batch's own statistics.
pub fn ld(p: &ParamStore, b: &LdBlock, x: &Arr) -> Arr {
    let t = gelu(&conv_layer(p, &b.dw, x));
    let t = batchnorm_train(&t, &widen(p.values(b.bn.gamma)), &widen(p.values(b.bn.beta)));
    let t = conv_layer(p, &b.compress, &conv_layer(p, &b.expand, &t));
    let mut y = add(x, &t);
    if let Some(sn) = &b.sn {
        y = add(&y, &sharpness(p, sn, x));
    }
    y
}

/// The hidden map and its three successive poolings.
pub fn sppf_pyramid(p: &ParamStore, s: &Sppf, x: &Arr) -> [Arr; 4] {
    let h = conv_layer(p, &s.pw_in, x);
    let p1 = maxpool2d(&h, &s.pool);
    let p2 = maxpool2d(&p1, &s.pool);
    let p3 = maxpool2d(&p2, &s.pool);
    [h, p1, p2, p3]
}

pub fn sppf(p: &ParamStore, s: &Sppf, x: &Arr) -> Arr {
    let [h, p1, p2, p3] = sppf_pyramid(p, s, x);
    conv_layer(p, &s.pw_out, &concat_channels(&[&h, &p1, &p2, &p3]))
}

pub fn mlia(p: &ParamStore, m: &Mlia, stages: &[&Arr]) -> Arr {
    let target = stages[m.shared_stage].shape;
    let projected: Vec<Arr> = stages
        .iter()
        .zip(&m.projections)
        .map(|(t, conv)| conv_layer(p, conv, &bilinear_resize(t, target.h, target.w)))
        .collect();
    let reduced = conv_layer(p, &m.reduce, &concat_channels(&projected.iter().collect::<Vec<_>>()));
    let gate = sigmoid(&conv_layer(p, &m.attn, &global_avg_pool(&reduced)));
    mul_broadcast(&reduced, &gate)
}

pub fn xfuse(p: &ParamStore, xf: &XFuse, up: &Arr, skip: &Arr, blur: &Arr) -> Arr {
    let t = gelu(&conv_layer(p, &xf.group_conv, &concat_channels(&[up, skip])));
    let f = conv_layer(p, &xf.pw_mix, &t);
    let guide = bilinear_resize(blur, f.shape.h, f.shape.w);
    conv_layer(p, &xf.pw_out, &concat_channels(&[&f, &guide]))
}

/// Train-mode forward of the whole network, clamped to `[0, 1]`.
pub fn network(p: &ParamStore, net: &Network, blur: &Arr) -> Arr {
    let mut x = conv_layer(p, &net.stem, blur);
    let mut stage_outs = Vec::new();
    for (i, blocks) in net.stages.iter().enumerate() {
        if i > 0 {
            let s = x.shape;
            x = conv_layer(p, &net.downs[i - 1], &bilinear_resize(&x, s.h / 2, s.w / 2));
        }
        for b in blocks {
            x = ld(p, b, &x);
        }
        stage_outs.push(x.clone());
    }
    if let Some(s) = &net.sppf {
        x = sppf(p, s, &x);
    }
    let last = stage_outs.len() - 1;
    let mut refs: Vec<&Arr> = stage_outs[..last].iter().collect();
    refs.push(&x);
    let fused = mlia(p, &net.mlia, &refs);
    for dec in &net.decoder {
        let (th, tw) = (blur.shape.h >> dec.stage, blur.shape.w >> dec.stage);
        let up = conv_layer(p, &dec.up, &bilinear_resize(&x, th, tw));
        let skip = conv_layer(p, &dec.skip, &bilinear_resize(&fused, th, tw));
        x = xfuse(p, &dec.xfuse, &up, &skip, blur);
    }
    clamp(&add(&conv_layer(p, &net.head, &x), blur), 0.0, 1.0)
}
