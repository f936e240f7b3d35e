//! Rank-4 NCHW tensors and the primitive operations the network is built from.
//!
//! Every forward primitive has a matching `*_grad` (or `*_backward`) function
//! returning exact reverse-mode gradients. There is no tape: higher layers
//! keep whatever intermediates they need and chain the gradient calls by hand.

mod activation;
mod conv;
mod norm;
mod ops;
mod pool;
mod resize;

pub use activation::{gelu, gelu_grad, gelu_scalar, sigmoid, sigmoid_grad};
pub use conv::{conv2d, conv2d_grad, ConvGrads, ConvSpec};
pub use norm::{batchnorm2d, batchnorm2d_grad, batchnorm2d_pure, BnCache, BnGrads, BnMode, BnState};
pub use ops::{
    add, clamp, concat_channels, global_avg_pool, global_avg_pool_grad, mul_broadcast, mul_broadcast_grad,
    scale_channels, scale_channels_grad, slice_channels, split_channels,
};
pub use pool::{maxpool2d, maxpool2d_grad, PoolSpec};
pub use resize::{bilinear_resize, bilinear_resize_grad};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense `f32` tensor in row-major NCHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// Panics if any dimension is zero or `data` has the wrong length.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        Self::try_from_vec(shape, data).expect("tensor construction")
    }

    pub fn try_from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.dims().contains(&0) {
            return Err(Error::invalid("tensor", format!("shape {shape} has a zero dimension")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape("tensor", "data length", data.len(), shape.numel()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(!shape.dims().contains(&0), "shape {shape} has a zero dimension");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Convenience constructor for `(n, c, h, w)`.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        Self::from_vec(Shape::new(n, c, h, w), data)
    }

    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f32, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { shape, data }
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    /// The `h × w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Tensor> {
        Tensor::try_from_vec(shape, self.data)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        ensure_same_shape("add_assign", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Select a contiguous window of rows and columns from every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(Error::invalid(
                "crop",
                format!("window {h}x{w} at ({top}, {left}) exceeds {}x{}", s.h, s.w),
            ));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = self.plane(n, c);
                for row in top..top + h {
                    data.extend_from_slice(&plane[row * s.w + left..row * s.w + left + w]);
                }
            }
        }
        Ok(Tensor::new(s.n, s.c, h, w, data))
    }

    /// Stack single-sample tensors of equal shape along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors"))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::invalid("stack", format!("shape {s} does not match {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::new(n, first.c, first.h, first.w, data))
    }

    /// Sample `n` as a batch-of-one tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let s = self.shape;
        let len = s.c * s.plane();
        Tensor::new(1, s.c, s.h, s.w, self.data[n * len..(n + 1) * len].to_vec())
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, got: Shape, expected: Shape) -> Result<()> {
    let pairs = [
        ("batch", got.n, expected.n),
        ("channels", got.c, expected.c),
        ("height", got.h, expected.h),
        ("width", got.w, expected.w),
    ];
    for (dim, g, e) in pairs {
        if g != e {
            return Err(Error::shape(op, dim, g, e));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(Tensor::try_from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
        assert!(Tensor::try_from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn index_is_row_major_nchw() {
        let t = Tensor::new(2, 3, 4, 5, (0..120).map(|v| v as f32).collect());
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.at(0, 0, 1, 0), 5.0);
    }

    #[test]
    fn crop_and_stack() {
        let t = Tensor::new(1, 1, 3, 3, (1..=9).map(|v| v as f32).collect());
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 8.0, 9.0]);
        assert!(t.crop(2, 2, 2, 2).is_err());
        let s = Tensor::stack(&[&c, &c]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 1, 2, 2));
        assert_eq!(s.sample(1), c);
    }
}
