//! Shared helpers for integration tests: a forward-only central
//! finite-difference oracle and its error metric.

/// Central finite differences of a scalar function at `values`.
/// Forward-evaluation only; independent of any backward implementation.
pub fn finite_diff<F>(values: &[f64], eps: f64, f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; values.len()];
    let mut work = values.to_vec();
    for i in 0..values.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = f(&work);
        work[i] = orig - eps;
        let fm = f(&work);
        work[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Max elementwise relative error with an absolute guard for tiny entries.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-6);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
