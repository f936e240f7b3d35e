use super::{ensure_same_shape, Shape, Tensor};
use crate::error::{Error, Result};

/// One output coordinate's two source taps and the weight of the second.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center sampling: `src = (i + 0.5) · in/out − 0.5`, clamped to `[0, in − 1]`.
fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn check_size(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bilinear_resize",
            format!("output size {out_h}x{out_w} must be at least 1x1"),
        ));
    }
    Ok(())
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_size(out_h, out_w)?;
    let s = input.shape();
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(input.clone());
    }
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let os = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for y in &ty {
                let r0 = &plane[y.lo * s.w..][..s.w];
                let r1 = &plane[y.hi * s.w..][..s.w];
                for x in &tx {
                    let top = r0[x.lo] as f64 * (1.0 - x.frac) + r0[x.hi] as f64 * x.frac;
                    let bot = r1[x.lo] as f64 * (1.0 - x.frac) + r1[x.hi] as f64 * x.frac;
                    out.push((top * (1.0 - y.frac) + bot * y.frac) as f32);
                }
            }
        }
    }
    Ok(Tensor::from_vec(os, out))
}

/// Gradient of [`bilinear_resize`] w.r.t. its input of shape `input_shape`.
pub fn bilinear_resize_grad(input_shape: Shape, upstream: &Tensor) -> Result<Tensor> {
    let us = upstream.shape();
    check_size(us.h, us.w)?;
    ensure_same_shape(
        "bilinear_resize_grad",
        Shape::new(us.n, us.c, 1, 1),
        Shape::new(input_shape.n, input_shape.c, 1, 1),
    )?;
    if (us.h, us.w) == (input_shape.h, input_shape.w) {
        return Ok(upstream.clone());
    }
    let ty = taps(input_shape.h, us.h);
    let tx = taps(input_shape.w, us.w);
    let p = input_shape.plane();
    let mut grad = vec![0.0f32; input_shape.numel()];
    for (idx, gplane) in grad.chunks_mut(p).enumerate() {
        let (n, c) = (idx / us.c, idx % us.c);
        let dplane = upstream.plane(n, c);
        let mut acc = vec![0.0f64; p];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let d = dplane[oy * us.w + ox] as f64;
                let w = input_shape.w;
                acc[y.lo * w + x.lo] += d * (1.0 - y.frac) * (1.0 - x.frac);
                acc[y.lo * w + x.hi] += d * (1.0 - y.frac) * x.frac;
                acc[y.hi * w + x.lo] += d * y.frac * (1.0 - x.frac);
                acc[y.hi * w + x.hi] += d * y.frac * x.frac;
            }
        }
        for (g, a) in gplane.iter_mut().zip(&acc) {
            *g = *a as f32;
        }
    }
    Ok(Tensor::from_vec(input_shape, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved() {
        let x = Tensor::full(Shape::new(1, 2, 5, 3), 7.0);
        for (h, w) in [(1, 1), (10, 6), (2, 9), (5, 3)] {
            let y = bilinear_resize(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn same_size_is_bit_identical() {
        let x = Tensor::new(1, 1, 2, 3, vec![0.1, -2.0, 3.3, 1e-7, 5.0, 6.0]);
        assert_eq!(bilinear_resize(&x, 2, 3).unwrap(), x);
    }

    #[test]
    fn two_by_two_up_to_four_by_four() {
        // Sources for out = 4, in = 2: (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25,
        // clamped to 0, 0.25, 0.75, 1.
        let x = Tensor::new(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let y = bilinear_resize(&x, 4, 4).unwrap();
        let coords = [0.0f64, 0.25, 0.75, 1.0];
        for (i, &sy) in coords.iter().enumerate() {
            for (j, &sx) in coords.iter().enumerate() {
                // f(y, x) = 2y + x on the 2x2 grid, bilinear reproduces it.
                let want = 2.0 * sy + sx;
                assert!((y.at(0, 0, i, j) as f64 - want).abs() < 1e-6, "({i},{j})");
            }
        }
    }

    #[test]
    fn rejects_empty_output() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 4).is_err());
    }
}
