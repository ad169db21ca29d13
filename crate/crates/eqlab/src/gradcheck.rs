//! Numerical gradient checking.
//!
//! Central finite differences of a scalar function, used throughout the test
//! suite as the independent oracle for every analytic gradient. Nothing here
//! touches the analytic paths it is meant to check.

/// Central finite-difference gradient of `f` at `x` with step `h`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2 h)` per coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let hi = f(&probe);
        probe[i] = x[i] - h;
        let lo = f(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Worst per-component relative error between two gradients.
///
/// The denominator is floored at 1e-3: components smaller than that are
/// compared absolutely (at tolerance * 1e-3). Central differences cannot
/// certify the relative accuracy of a component near zero — the subtraction
/// cancels to rounding noise of the full loss value — while any genuine
/// gradient bug shows up at the magnitude of the component itself.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
