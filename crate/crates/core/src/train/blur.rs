//! Synthetic linear motion blur.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const KERNEL_GRAMMAR: &str = "linear:len=<integer >= 1>,angle=<degrees>";

/// Tolerance on the kernel mass accepted by [`synth_blur`].
pub const KERNEL_SUM_TOL: f64 = 1e-6;

/// A 2-D correlation kernel with odd sides, anchored at its center.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionKernel {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl MotionKernel {
    pub fn identity() -> Self {
        MotionKernel {
            h: 1,
            w: 1,
            data: vec![1.0],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `len` unit-spaced samples along a segment through the center, each splatted
    /// bilinearly onto the grid. `angle` is in degrees, counter-clockwise from +x
    /// with rows growing downwards.
    pub fn linear(len: usize, angle_deg: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("motion kernel", "len must be at least 1"));
        }
        if !angle_deg.is_finite() {
            return Err(Error::invalid("motion kernel", "angle must be finite"));
        }
        let half = (len - 1) as f64 / 2.0;
        let radius = half.ceil() as usize + 1;
        let side = 2 * radius + 1;
        let mut grid = vec![0.0f64; side * side];
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r
            } else {
                v
            }
        };
        let weight = 1.0 / len as f64;
        for k in 0..len {
            let t = k as f64 - half;
            let x = snap(radius as f64 + t * cos);
            let y = snap(radius as f64 - t * sin);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    if wy * wx > 0.0 {
                        grid[(y0 + dy) * side + x0 + dx] += weight * wy * wx;
                    }
                }
            }
        }
        let full = MotionKernel {
            h: side,
            w: side,
            data: grid,
        };
        Ok(full.trimmed().normalized())
    }

    /// Drop all-zero border rows and columns in symmetric pairs, keeping the center.
    fn trimmed(self) -> Self {
        let row_empty = |k: &Self, y: usize| (0..k.w).all(|x| k.at(y, x) == 0.0);
        let col_empty = |k: &Self, x: usize| (0..k.h).all(|y| k.at(y, x) == 0.0);
        let mut top = 0;
        while top < self.h / 2 && row_empty(&self, top) && row_empty(&self, self.h - 1 - top) {
            top += 1;
        }
        let mut left = 0;
        while left < self.w / 2 && col_empty(&self, left) && col_empty(&self, self.w - 1 - left) {
            left += 1;
        }
        let (h, w) = (self.h - 2 * top, self.w - 2 * left);
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.w + left..y * self.w + left + w]);
        }
        MotionKernel { h, w, data }
    }

    fn normalized(mut self) -> Self {
        let s = self.sum();
        for v in &mut self.data {
            *v /= s;
        }
        self
    }

    /// Single-channel image of the kernel scaled so its peak is 1.
    pub fn to_image(&self) -> Tensor {
        let peak = self.data.iter().cloned().fold(0.0, f64::max);
        let data = self.data.iter().map(|&v| (v / peak) as f32).collect();
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), data)
    }
}

impl FromStr for MotionKernel {
    type Err = Error;

    /// Parses `linear:len=9,angle=30`. Keys may come in either order.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::invalid("kernel spec", format!("{why} in {s:?}; expected {KERNEL_GRAMMAR}"));
        let body = s
            .trim()
            .strip_prefix("linear:")
            .ok_or_else(|| bad("unknown kernel family"))?;
        let (mut len, mut angle) = (None, None);
        for part in body.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("missing '='"))?;
            match k.trim() {
                "len" if len.is_none() => {
                    len = Some(v.trim().parse::<usize>().map_err(|_| bad("len is not an integer"))?)
                }
                "angle" if angle.is_none() => {
                    angle = Some(v.trim().parse::<f64>().map_err(|_| bad("angle is not a number"))?)
                }
                "len" | "angle" => return Err(bad("repeated key")),
                _ => return Err(bad("unknown key")),
            }
        }
        let len = len.ok_or_else(|| bad("missing len"))?;
        let angle = angle.ok_or_else(|| bad("missing angle"))?;
        if len == 0 {
            return Err(bad("len must be at least 1"));
        }
        MotionKernel::linear(len, angle)
    }
}

/// Per-channel correlation with edge-replicated borders.
pub fn synth_blur(sharp: &Tensor, kernel: &MotionKernel) -> Result<Tensor> {
    if kernel.data.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::invalid("synth_blur", "kernel has a negative or NaN entry"));
    }
    let total = kernel.sum();
    if (total - 1.0).abs() > KERNEL_SUM_TOL {
        return Err(Error::invalid(
            "synth_blur",
            format!("kernel sums to {total}, expected 1"),
        ));
    }
    if kernel.h.is_multiple_of(2) || kernel.w.is_multiple_of(2) {
        return Err(Error::invalid("synth_blur", "kernel sides must be odd"));
    }
    let s = sharp.shape();
    let (ch, cw) = ((kernel.h / 2) as isize, (kernel.w / 2) as isize);
    let taps: Vec<(isize, isize, f64)> = (0..kernel.h)
        .flat_map(|i| (0..kernel.w).map(move |j| (i, j)))
        .filter(|&(i, j)| kernel.at(i, j) != 0.0)
        .map(|(i, j)| (i as isize - ch, j as isize - cw, kernel.at(i, j)))
        .collect();
    let mut out = Vec::with_capacity(sharp.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = sharp.plane(n, c);
            for y in 0..s.h as isize {
                for x in 0..s.w as isize {
                    let mut acc = 0.0f64;
                    for &(dy, dx, k) in &taps {
                        let yy = (y + dy).clamp(0, s.h as isize - 1) as usize;
                        let xx = (x + dx).clamp(0, s.w as isize - 1) as usize;
                        acc += k * f64::from(plane[yy * s.w + xx]);
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Ok(Tensor::from_vec(s, out))
}
