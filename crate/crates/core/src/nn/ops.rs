use ndarray::{Array2, Axis, Zip};
use rand::Rng;

use crate::real::Real;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Given `y = softmax(x)` row-wise and upstream `dy`, returns `dx`.
pub fn softmax_rows_backward<F: Real>(y: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let dots = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
    (dy - &dots) * y
}

/// Row-wise log-softmax (log-sum-exp with max subtraction).
pub fn log_softmax_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    y
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Exact GELU: `x * Φ(x)`.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let half = F::of(0.5);
    half * x * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_backward<F: Real>(x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let inv_sqrt_2pi = F::of(0.398_942_280_401_432_7);
    let mut dx = Array2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let cdf = F::of(0.5) * (F::one() + (v * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
        let pdf = inv_sqrt_2pi * (-(v * v) * F::of(0.5)).exp();
        *d = g * (cdf + v * pdf);
    });
    dx
}

/// Inverted dropout mask: entries are `0` or `1/(1-rate)`.
pub fn dropout_mask<F: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Array2<F> {
    let scale = F::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < rate {
            F::zero()
        } else {
            scale
        }
    })
}
