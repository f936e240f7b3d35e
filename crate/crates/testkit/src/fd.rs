//! Central finite differences.

use rand::seq::index::sample;
use rand::Rng;
use rtf_core::Tensor;

/// Perturbation applied to each probed coordinate.
pub const FD_STEP: f32 = 1e-3;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-3;

/// `Σ y·r` accumulated in f64; its gradient w.r.t. `y` is `r`.
pub fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    assert_eq!(y.shape(), r.shape(), "weighted_sum shapes");
    y.data()
        .iter()
        .zip(r.data())
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum()
}

/// Central difference `(L(x+h) − L(x−h)) / (x₊ − x₋)` at each coordinate, where
/// `x₊` and `x₋` are the f32 values actually stored so rounding of the step
/// itself does not bias the quotient.
pub fn central<T>(
    state: &mut T,
    coords: &[usize],
    step: f32,
    slot: impl Fn(&mut T) -> &mut [f32],
    loss: impl Fn(&T) -> f64,
) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let orig = slot(state)[i];
            let plus = orig + step;
            let minus = orig - step;
            slot(state)[i] = plus;
            let lp = loss(state);
            slot(state)[i] = minus;
            let lm = loss(state);
            slot(state)[i] = orig;
            (lp - lm) / (f64::from(plus) - f64::from(minus))
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Coordinates to probe: the `top` largest analytic entries plus `random`
/// others, or everything when the tensor is small.
pub fn pick_coords<R: Rng + ?Sized>(analytic: &[f32], top: usize, random: usize, rng: &mut R) -> Vec<usize> {
    let n = analytic.len();
    if n <= top + random {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
    let mut picked: Vec<usize> = order[..top].to_vec();
    let rest = &order[top..];
    picked.extend(sample(rng, rest.len(), random).into_iter().map(|i| rest[i]));
    picked
}

pub fn gather(values: &[f32], coords: &[usize]) -> Vec<f64> {
    coords.iter().map(|&i| f64::from(values[i])).collect()
}
