//! Central finite differences, for checking analytic gradients.
//!
//! Only forward evaluations are used here, never the backward rules.

use crate::scalar::Real;

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate `i`.
pub fn numeric_gradient<F: Real>(mut f: impl FnMut(&[F]) -> F, x: &[F], eps: F) -> Vec<F> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (eps + eps)
        })
        .collect()
}

/// Finite differences restricted to the listed coordinates.
pub fn numeric_partials<F: Real>(mut f: impl FnMut(&[F]) -> F, x: &[F], coords: &[usize], eps: F) -> Vec<F> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (eps + eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting meaningless ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error<F: Real>(analytic: &[F], numeric: &[F], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(a.to_f64().unwrap(), n.to_f64().unwrap(), floor))
        .fold(0.0, f64::max)
}
