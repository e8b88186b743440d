//! Information criteria on the `-2 loglik` scale, smaller is better.

use super::EstimationResult;

/// `(aic, bic)` with `aic = -2 ll + 2 d` and `bic = -2 ll + ln(n) d`.
pub fn information_criteria(loglik: f64, dim: usize, n_obs: f64) -> (f64, f64) {
    let d = dim as f64;
    (-2.0 * loglik + 2.0 * d, -2.0 * loglik + n_obs.ln() * d)
}

/// Indices of `results` from best to worst BIC.
pub fn rank_by_bic(results: &[EstimationResult]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..results.len()).collect();
    idx.sort_by(|a, b| results[*a].bic.total_cmp(&results[*b].bic));
    idx
}
