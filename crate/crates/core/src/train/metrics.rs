//! Loss and image-quality metrics.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// Reported when the mean squared error falls below `PSNR_MSE_FLOOR`.
pub const PSNR_CAP: f64 = 99.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared error and its gradient `2(pred − target)/N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    ensure_same_shape("mse_loss", target.shape(), pred.shape())?;
    let n = pred.numel() as f64;
    let mut sum = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = f64::from(p) - f64::from(t);
            sum += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(pred.shape(), grad)))
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_same_shape("mse", b.shape(), a.shape())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10·log10(1/mse)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < PSNR_MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of one plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11×11 Gaussian windows (σ = 1.5),
/// averaged over channels and batch items. Dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_same_shape("ssim", b.shape(), a.shape())?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!(
                "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                s.h, s.w
            ),
        ));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = a.plane(n, c).iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = b.plane(n, c).iter().map(|&v| f64::from(v)).collect();
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
            let mx = filter_valid(&x, s.h, s.w, &k);
            let my = filter_valid(&y, s.h, s.w, &k);
            let mxx = filter_valid(&prod(&x, &x), s.h, s.w, &k);
            let myy = filter_valid(&prod(&y, &y), s.h, s.w, &k);
            let mxy = filter_valid(&prod(&x, &y), s.h, s.w, &k);
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let cxy = mxy[i] - ux * uy;
                acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            }
            total += acc / mx.len() as f64;
        }
    }
    Ok(total / (s.n * s.c) as f64)
}
