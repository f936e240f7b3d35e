//! Channel bookkeeping and elementwise arithmetic.

use super::{ensure_same_shape, Shape, Tensor};
use crate::error::{Error, Result};

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

pub fn clamp(x: &Tensor, lo: f32, hi: f32) -> Tensor {
    x.map(|v| v.clamp(lo, hi))
}

/// Concatenate along channels, preserving part order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no parts"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        for (dim, got, expected) in [
            ("batch", s.n, first.n),
            ("height", s.h, first.h),
            ("width", s.w, first.w),
        ] {
            if got != expected {
                return Err(Error::shape("concat_channels", dim, got, expected));
            }
        }
        channels += s.c;
    }
    let os = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for p in parts {
            let len = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * len..(n + 1) * len]);
        }
    }
    Ok(Tensor::from_vec(os, data))
}

/// Channels `start..start + len` of every sample.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if len == 0 || start + len > s.c {
        return Err(Error::invalid(
            "slice_channels",
            format!("channels {start}..{} out of 0..{}", start + len, s.c),
        ));
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * len * p);
    for n in 0..s.n {
        let base = n * s.c * p;
        data.extend_from_slice(&x.data()[base + start * p..base + (start + len) * p]);
    }
    Ok(Tensor::new(s.n, len, s.h, s.w, data))
}

/// Inverse of [`concat_channels`]: cut `x` into consecutive channel blocks.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = sizes.iter().sum();
    if total != x.shape().c {
        return Err(Error::shape("split_channels", "channels", x.shape().c, total));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = slice_channels(x, start, len);
            start += len;
            part
        })
        .collect()
}

/// Mean over each `h × w` plane, giving `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let s = x.shape();
    let data = (0..s.n * s.c)
        .map(|i| {
            let plane = x.plane(i / s.c, i % s.c);
            (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
        })
        .collect();
    Tensor::new(s.n, s.c, 1, 1, data)
}

pub fn global_avg_pool_grad(input_shape: Shape, upstream: &Tensor) -> Result<Tensor> {
    ensure_same_shape(
        "global_avg_pool_grad",
        upstream.shape(),
        Shape::new(input_shape.n, input_shape.c, 1, 1),
    )?;
    let p = input_shape.plane();
    let mut data = Vec::with_capacity(input_shape.numel());
    for &g in upstream.data() {
        let v = (g as f64 / p as f64) as f32;
        data.extend(std::iter::repeat_n(v, p));
    }
    Ok(Tensor::from_vec(input_shape, data))
}

fn check_gate(x: Shape, gate: Shape) -> Result<()> {
    ensure_same_shape("mul_broadcast gate", gate, Shape::new(x.n, x.c, 1, 1))
}

/// `x · gate` with a `(n, c, 1, 1)` gate broadcast over space.
pub fn mul_broadcast(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    check_gate(s, gate.shape())?;
    let p = s.plane();
    let mut out = x.clone();
    for (chunk, &g) in out.data_mut().chunks_mut(p).zip(gate.data()) {
        for v in chunk {
            *v *= g;
        }
    }
    Ok(out)
}

/// Returns `(d x, d gate)`.
pub fn mul_broadcast_grad(x: &Tensor, gate: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    check_gate(x.shape(), gate.shape())?;
    ensure_same_shape("mul_broadcast_grad", upstream.shape(), x.shape())?;
    let dx = mul_broadcast(upstream, gate)?;
    let p = x.shape().plane();
    let dgate = x
        .data()
        .chunks(p)
        .zip(upstream.data().chunks(p))
        .map(|(xs, ds)| xs.iter().zip(ds).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32)
        .collect();
    Ok((dx, Tensor::from_vec(gate.shape(), dgate)))
}

/// Multiply channel `c` of every sample by `gain[c]`.
pub fn scale_channels(x: &Tensor, gain: &[f32]) -> Result<Tensor> {
    let s = x.shape();
    if gain.len() != s.c {
        return Err(Error::shape("scale_channels", "gain length", gain.len(), s.c));
    }
    let p = s.plane();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(p).enumerate() {
        let g = gain[i % s.c];
        for v in chunk {
            *v *= g;
        }
    }
    Ok(out)
}

/// Returns `(d x, d gain)`.
pub fn scale_channels_grad(x: &Tensor, gain: &[f32], upstream: &Tensor) -> Result<(Tensor, Vec<f32>)> {
    ensure_same_shape("scale_channels_grad", upstream.shape(), x.shape())?;
    let dx = scale_channels(upstream, gain)?;
    let s = x.shape();
    let p = s.plane();
    let mut dgain = vec![0.0f64; s.c];
    for (i, (xs, ds)) in x.data().chunks(p).zip(upstream.data().chunks(p)).enumerate() {
        dgain[i % s.c] += xs.iter().zip(ds).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
    }
    Ok((dx, dgain.into_iter().map(|v| v as f32).collect()))
}
