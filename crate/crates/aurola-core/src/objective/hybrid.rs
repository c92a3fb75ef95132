//! Hybrid-NCE: InfoNCE generalized with tag-matched positives and
//! similarity-reweighted negatives.
//!
//! Per anchor row `i` (temperature `tau`, positives `P_i`, negatives `N_i`):
//!
//! ```text
//! S_pos = e^{S_ii/tau} + lambda * sum_{k in P_i} e^{S_ik/tau}
//! S_neg = sum_{j in N_i} e^{S_ij/tau} * w_ij
//! w_ij  = |N_i| * e^{beta * S_ij} / sum_{k in N_i} e^{beta * S_ik}
//! term  = -log( S_pos / (S_pos + S_neg) )
//! ```
//!
//! With `lambda = beta = 0` and empty positive sets this is exactly InfoNCE;
//! with `lambda = 1, beta = 0` the per-row term equals the supervised
//! contrastive form `-log( sum_{k in {i} ∪ P_i} e^{S_ik/tau} / sum_j e^{S_ij/tau} )`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::similarity::SimilarityMatrix;

use super::{require_square, LossConfig, LossOutput, PositiveSets};

/// Reweighting over a negative index set: `w_j = |N| * softmax(beta * s)_j`.
/// Weights sum to `|N|` and are invariant to shifting the whole row.
pub fn negative_weights(s_row: &[f64], negatives: &[usize], beta: f64) -> Result<Vec<f64>> {
    if negatives.is_empty() {
        return Err(CoreError::EmptyNegativeSet);
    }
    let count = negatives.len() as f64;
    let mut logits: Vec<f64> = negatives.iter().map(|&j| beta * s_row[j]).collect();
    let m = math::max_of(&logits);
    let mut total = 0.0;
    for logit in logits.iter_mut() {
        *logit = math::exp(*logit - m);
        total += *logit;
    }
    Ok(logits.into_iter().map(|e| count * e / total).collect())
}

/// One directional (row-anchored) pass. Returns per-row terms and the
/// gradient contribution, already averaged over rows.
fn row_pass(
    s: &SimilarityMatrix,
    positives: &PositiveSets,
    cfg: &LossConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = s.rows();
    let inv_count = 1.0 / n as f64;
    let mut terms = Vec::with_capacity(n);
    let mut grad = vec![0.0; n * n];
    let mut scaled = vec![0.0; n];
    for i in 0..n {
        let row = s.row(i);
        for (z, &v) in scaled.iter_mut().zip(row.iter()) {
            *z = v / cfg.tau;
        }
        let m = math::max_of(&scaled);
        for z in scaled.iter_mut() {
            *z = math::exp(*z - m);
        }
        // scaled[j] now holds E_j = e^{S_ij/tau - m}; the shared e^m factor
        // cancels in every ratio below.
        let pos = positives.positives(i);
        let negs = positives.negatives(i);
        let mut pos_sum = scaled[i];
        for &k in pos {
            pos_sum += cfg.lambda * scaled[k];
        }
        let weights = if negs.is_empty() {
            Vec::new()
        } else {
            negative_weights(row, &negs, cfg.beta)?
        };
        let mut neg_sum = 0.0;
        for (&j, &w) in negs.iter().zip(weights.iter()) {
            neg_sum += scaled[j] * w;
        }
        terms.push(math::ln_1p(neg_sum / pos_sum));

        let denom = pos_sum + neg_sum;
        // d(term)/dS for anchor and positives: coef * E_j, with
        // coef = (1/denom - 1/pos_sum) / tau (negative whenever neg_sum > 0).
        let pos_coef = (1.0 / denom - 1.0 / pos_sum) / cfg.tau;
        let g = &mut grad[i * n..(i + 1) * n];
        g[i] += inv_count * pos_coef * scaled[i];
        for &k in pos {
            g[k] += inv_count * pos_coef * cfg.lambda * scaled[k];
        }
        let neg_count = negs.len() as f64;
        for (&j, &w) in negs.iter().zip(weights.iter()) {
            let mut d = scaled[j] * w / cfg.tau;
            if cfg.grad_through_weights {
                // Through the softmax weights: beta * w_j * (E_j - S_neg/|N|).
                d += cfg.beta * w * (scaled[j] - neg_sum / neg_count);
            }
            g[j] += inv_count * d / denom;
        }
    }
    Ok((terms, grad))
}

/// Hybrid-NCE over a square in-batch similarity matrix. With
/// `cfg.symmetrize` the row-anchored and column-anchored losses are
/// averaged (positive sets apply to both directions since tag equality is
/// symmetric). The gradient is exact; set `cfg.grad_through_weights = false`
/// to treat `w_ij` as constants instead.
pub fn hybrid_nce(
    s: &SimilarityMatrix,
    positives: &PositiveSets,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let n = require_square(s)?;
    if positives.len() != n {
        return Err(CoreError::LengthMismatch {
            left: positives.len(),
            right: n,
        });
    }
    let (terms, grad) = row_pass(s, positives, cfg)?;
    if !cfg.symmetrize {
        return Ok(LossOutput::from_terms(terms, grad));
    }
    let transposed = s.transposed();
    let (col_terms, col_grad) = row_pass(&transposed, positives, cfg)?;
    let mut combined_terms = Vec::with_capacity(n);
    for (r, c) in terms.iter().zip(col_terms.iter()) {
        combined_terms.push(0.5 * (r + c));
    }
    let mut combined_grad = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            combined_grad[i * n + j] = 0.5 * (grad[i * n + j] + col_grad[j * n + i]);
        }
    }
    Ok(LossOutput::from_terms(combined_terms, combined_grad))
}
