//! Central finite-difference oracle for the gradient test suites.
//!
//! Everything here evaluates *forward* passes only, so it stays independent
//! of `Graph::backward`, the code it is used to check. Test support; not
//! part of the public model API.

use alloc::vec::Vec;

/// Central finite differences of a scalar function of several parameter
/// vectors: `df/dp[i][j] ~ (f(p + h e_ij) - f(p - h e_ij)) / 2h`.
pub fn central_difference(params: &[Vec<f64>], step: f64, mut f: impl FnMut(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Vec::with_capacity(params[p].len());
        for j in 0..params[p].len() {
            let orig = work[p][j];
            work[p][j] = orig + step;
            let plus = f(&work);
            work[p][j] = orig - step;
            let minus = f(&work);
            work[p][j] = orig;
            g.push((plus - minus) / (2.0 * step));
        }
        grads.push(g);
    }
    grads
}

/// Relative error with an absolute floor so near-zero gradient pairs do not
/// blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Worst relative error across aligned parameter gradients.
pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            worst = worst.max(rel_err(av, nv));
        }
    }
    worst
}
