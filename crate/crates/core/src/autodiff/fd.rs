//! Central finite differences, the independent gradient oracle used by the
//! test suites. Kept free of any dependency on the analytic backward paths it
//! checks.

/// Central-difference gradient of a scalar function at `point`.
pub fn finite_diff_grad<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x);
        x[i] = point[i] - h;
        let fm = f(&x);
        x[i] = point[i];
        grads.push((fp - fm) / (2.0 * h));
    }
    grads
}

/// Relative error with an absolute floor, the standard gradcheck metric.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Asserts every component of `analytic` against central differences of `f`.
pub fn assert_grad_close<F>(f: F, point: &[f64], analytic: &[f64], h: f64, tol: f64, context: &str)
where
    F: Fn(&[f64]) -> f64,
{
    let numeric = finite_diff_grad(&f, point, h);
    assert_eq!(numeric.len(), analytic.len(), "{context}: gradient length");
    for i in 0..numeric.len() {
        let e = rel_error(analytic[i], numeric[i]);
        assert!(
            e < tol,
            "{context}: component {i}: analytic {} vs numeric {} (rel err {e:.3e})",
            analytic[i],
            numeric[i]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1];
        let g = finite_diff_grad(f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let f = |v: &[f64]| crate::autodiff::sigmoid(v[0]);
        let g = finite_diff_grad(f, &[0.0], 1e-5);
        assert!((g[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn softplus_derivative_is_sigmoid() {
        for &x in &[-1.0, 0.0, 2.0] {
            let f = |v: &[f64]| crate::autodiff::softplus(v[0]);
            let g = finite_diff_grad(f, &[x], 1e-5);
            assert!((g[0] - crate::autodiff::sigmoid(x)).abs() < 1e-9, "at x={x}");
        }
    }
}
