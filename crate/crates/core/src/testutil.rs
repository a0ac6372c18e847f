//! Shared helpers for in-crate tests.

use alloc::vec::Vec;

/// Central finite differences of a scalar function at `x`.
pub(crate) fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * eps));
    }
    grad
}

/// Asserts every analytic component is within `rel_tol` of the numeric one.
/// Differences under the 1e-7 absolute floor count as finite-difference
/// noise and pass outright.
pub(crate) fn assert_grad_matches(analytic: &[f64], numeric: &[f64], rel_tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if (a - n).abs() <= 1e-7 {
            continue;
        }
        let denom = a.abs().max(n.abs());
        assert!(
            (a - n).abs() / denom < rel_tol,
            "gradient component {i}: analytic {a} vs numeric {n}"
        );
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn assert_close_slice(a: &[f64], b: &[f64], tol: f64) {
    let d = max_abs_diff(a, b);
    assert!(d <= tol, "max abs diff {d} exceeds {tol}");
}
