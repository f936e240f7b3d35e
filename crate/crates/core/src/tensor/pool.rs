use rayon::prelude::*;

use super::{ensure_same_shape, Shape, Tensor};
use crate::error::{Error, Result};

/// Square max pooling window; padding behaves as −∞.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    /// The SPPF pool: 5×5, stride 1, padding 2.
    pub const SPPF: PoolSpec = PoolSpec {
        kernel: 5,
        stride: 1,
        padding: 2,
    };

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.kernel.is_multiple_of(2) || self.stride == 0 {
            return Err(Error::invalid(
                "maxpool2d",
                format!("kernel {} must be odd and stride positive", self.kernel),
            ));
        }
        if self.padding > self.kernel / 2 {
            return Err(Error::invalid(
                "maxpool2d",
                format!("padding {} exceeds half the kernel", self.padding),
            ));
        }
        let ph = input.h + 2 * self.padding;
        let pw = input.w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::invalid("maxpool2d", "input smaller than window"));
        }
        Ok(Shape::new(
            input.n,
            input.c,
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }
}

/// Window `[lo, hi)` of output position `o` along an axis of length `len`.
fn window(o: usize, spec: &PoolSpec, len: usize) -> (usize, usize) {
    let start = (o * spec.stride) as isize - spec.padding as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + spec.kernel as isize).min(len as isize)) as usize;
    (lo, hi)
}

/// Flat index of the winning input element for every output element.
///
/// Ties go to the first strict maximum in row-major scan order. Taking the
/// first maximum of each row window, then the first maximum over rows, picks
/// the same element as scanning the full window.
fn argmax(input: &Tensor, spec: &PoolSpec) -> Result<(Shape, Vec<usize>)> {
    let s = input.shape();
    let os = spec.output_shape(s)?;
    let mut winners = vec![0usize; os.numel()];
    winners.par_chunks_mut(os.plane()).enumerate().for_each(|(idx, out)| {
        let plane = input.plane(idx / s.c, idx % s.c);
        let base = idx * s.plane();
        let cols: Vec<(usize, usize)> = (0..os.w).map(|ox| window(ox, spec, s.w)).collect();
        // best column per (input row, output column)
        let mut row_best = vec![0usize; s.h * os.w];
        for y in 0..s.h {
            let row = &plane[y * s.w..][..s.w];
            for (ox, &(lo, hi)) in cols.iter().enumerate() {
                let mut best = lo;
                for x in lo + 1..hi {
                    if row[x] > row[best] {
                        best = x;
                    }
                }
                row_best[y * os.w + ox] = best;
            }
        }
        for oy in 0..os.h {
            let (lo, hi) = window(oy, spec, s.h);
            for ox in 0..os.w {
                let mut by = lo;
                let mut bv = plane[lo * s.w + row_best[lo * os.w + ox]];
                for y in lo + 1..hi {
                    let v = plane[y * s.w + row_best[y * os.w + ox]];
                    if v > bv {
                        by = y;
                        bv = v;
                    }
                }
                out[oy * os.w + ox] = base + by * s.w + row_best[by * os.w + ox];
            }
        }
    });
    Ok((os, winners))
}

pub fn maxpool2d(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let (os, winners) = argmax(input, spec)?;
    let data = winners.iter().map(|&i| input.data()[i]).collect();
    Ok(Tensor::from_vec(os, data))
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool2d_grad(input: &Tensor, spec: &PoolSpec, upstream: &Tensor) -> Result<Tensor> {
    let (os, winners) = argmax(input, spec)?;
    ensure_same_shape("maxpool2d_grad", upstream.shape(), os)?;
    let mut acc = vec![0.0f64; input.numel()];
    for (&i, &g) in winners.iter().zip(upstream.data()) {
        acc[i] += g as f64;
    }
    Ok(Tensor::from_vec(
        input.shape(),
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 6, 7), -3.5);
        let y = maxpool2d(&x, &PoolSpec::SPPF).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_peak_spreads_over_its_window() {
        let mut x = Tensor::zeros(Shape::new(1, 1, 11, 11));
        x.set(0, 0, 5, 5, 9.0);
        let y = maxpool2d(&x, &PoolSpec::SPPF).unwrap();
        for r in 0..11usize {
            for c in 0..11usize {
                let inside = r.abs_diff(5) <= 2 && c.abs_diff(5) <= 2;
                assert_eq!(y.at(0, 0, r, c), if inside { 9.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn negative_values_never_lose_to_padding() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), -1.0);
        let y = maxpool2d(&x, &PoolSpec::SPPF).unwrap();
        assert!(y.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn even_kernel_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let spec = PoolSpec {
            kernel: 4,
            stride: 1,
            padding: 2,
        };
        assert!(maxpool2d(&x, &spec).is_err());
    }
}
