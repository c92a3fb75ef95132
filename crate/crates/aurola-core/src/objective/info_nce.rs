//! Temperature-scaled InfoNCE over a square in-batch similarity matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::similarity::SimilarityMatrix;

use super::{require_square, LossOutput};

/// `-(1/N) * sum_i log( e^{S_ii/tau} / sum_j e^{S_ij/tau} )` with its exact
/// gradient. Row-anchored: the diagonal holds the paired similarity.
/// Stable via per-row max subtraction.
pub fn info_nce(s: &SimilarityMatrix, tau: f64) -> Result<LossOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CoreError::NonPositiveTau(tau));
    }
    let n = require_square(s)?;
    let mut per_row_terms = Vec::with_capacity(n);
    let mut grad = vec![0.0; n * n];
    let inv_count = 1.0 / n as f64;
    let mut scaled = vec![0.0; n];
    for i in 0..n {
        let row = s.row(i);
        for (z, &v) in scaled.iter_mut().zip(row.iter()) {
            *z = v / tau;
        }
        let m = math::max_of(&scaled);
        let mut denom = 0.0;
        for z in scaled.iter_mut() {
            *z = math::exp(*z - m);
            denom += *z;
        }
        // scaled[j] now holds e^{z_j - m}; log term = lse(z) - z_i.
        per_row_terms.push(math::ln(denom) - math::ln(scaled[i]));
        for j in 0..n {
            let p = scaled[j] / denom;
            let delta = if i == j { 1.0 } else { 0.0 };
            grad[i * n + j] = (p - delta) / tau * inv_count;
        }
    }
    Ok(LossOutput::from_terms(per_row_terms, grad))
}
