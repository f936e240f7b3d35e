use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{ensure_same_shape, Tensor};
use crate::error::Result;

/// Exact GELU, `x·Φ(x)` with `Φ` the standard normal CDF.
pub fn gelu_scalar(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))) as f32
}

fn gelu_derivative(x: f32) -> f64 {
    let x = x as f64;
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(input: &Tensor) -> Tensor {
    input.map(gelu_scalar)
}

/// Gradient w.r.t. the GELU input, given the forward input and the output gradient.
pub fn gelu_grad(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    ensure_same_shape("gelu_grad", upstream.shape(), input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| (gelu_derivative(x) * g as f64) as f32)
        .collect();
    Ok(Tensor::from_vec(input.shape(), data))
}

fn sigmoid_scalar(x: f32) -> f32 {
    let x = x as f64;
    // Split on sign so exp never overflows.
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s as f32
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Gradient w.r.t. the sigmoid input, expressed through the forward *output*.
pub fn sigmoid_grad(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    ensure_same_shape("sigmoid_grad", upstream.shape(), output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&s, &g)| {
            let s = s as f64;
            (s * (1.0 - s) * g as f64) as f32
        })
        .collect();
    Ok(Tensor::from_vec(output.shape(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its Maclaurin series, summed until terms vanish in f64.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x * x / k;
            let contrib = term / (2.0 * k + 1.0);
            sum += contrib;
            if contrib.abs() < 1e-18 {
                break;
            }
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_at_one_matches_series_erf() {
        let expected = 0.5 * (1.0 + erf_series(FRAC_1_SQRT_2));
        assert!((gelu_scalar(1.0) as f64 - expected).abs() < 1e-6);
        // 0.8413447460685429 = Φ(1)
        assert!((expected - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!(sigmoid_scalar(1e4), 1.0);
        assert_eq!(sigmoid_scalar(-1e4), 0.0);
        assert!(sigmoid_scalar(-80.0) > 0.0);
    }
}
