//! Second-stage re-ranking: a pairwise cross-modal scorer rescores the
//! retrieval pool in both directions and the scores are fused with the
//! initial similarities.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::eval::GroundTruth;
use crate::index::{compare_ranked, RetrievalResult};
use crate::math;
use crate::mining::HardNegativePool;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::types::Modality;

/// Pairwise matcher emitting `(logit_yes, logit_no)`; the probability of a
/// match is the two-way softmax [`rank_prob`]. Deterministic per input.
pub trait PairScorer {
    fn score(&self, query: &[f64], candidate: &[f64]) -> (f64, f64);
}

/// `p(yes) = e^{ly} / (e^{ly} + e^{ln})`, computed as `sigmoid(ly - ln)`.
pub fn rank_prob(logit_yes: f64, logit_no: f64) -> f64 {
    math::sigmoid(logit_yes - logit_no)
}

/// Desk-scale pairwise scorer: `logit_yes = x^T W y + b_yes`,
/// `logit_no = -x^T W y + b_no`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearScorer {
    /// Row-major `dim x dim`.
    pub weight: Vec<f64>,
    pub bias_yes: f64,
    pub bias_no: f64,
    pub dim: usize,
}

impl BilinearScorer {
    pub fn zeros(dim: usize) -> Self {
        BilinearScorer {
            weight: alloc::vec![0.0; dim * dim],
            bias_yes: 0.0,
            bias_no: 0.0,
            dim,
        }
    }

    pub fn from_parts(weight: Vec<f64>, bias_yes: f64, bias_no: f64, dim: usize) -> Result<Self> {
        if weight.len() != dim * dim {
            return Err(CoreError::LengthMismatch {
                left: weight.len(),
                right: dim * dim,
            });
        }
        if weight.iter().any(|x| !x.is_finite()) || !bias_yes.is_finite() || !bias_no.is_finite() {
            return Err(CoreError::NonFinite("bilinear scorer parameters"));
        }
        Ok(BilinearScorer {
            weight,
            bias_yes,
            bias_no,
            dim,
        })
    }

    fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * math::dot(&self.weight[i * self.dim..(i + 1) * self.dim], y);
        }
        acc
    }
}

impl PairScorer for BilinearScorer {
    fn score(&self, query: &[f64], candidate: &[f64]) -> (f64, f64) {
        let s = self.bilinear(query, candidate);
        (s + self.bias_yes, -s + self.bias_no)
    }
}

/// Fusion weights and pool size for re-ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub alpha_ret: f64,
    pub alpha_a2t: f64,
    pub alpha_t2a: f64,
    pub pool_size: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha_ret: 1.0,
            alpha_a2t: 0.0,
            alpha_t2a: 0.0,
            pool_size: 50,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(CoreError::InvalidConfig(String::from("pool_size must be >= 1")));
        }
        let alphas = [self.alpha_ret, self.alpha_a2t, self.alpha_t2a];
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(CoreError::NonFinite("fusion weights"));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(CoreError::InvalidConfig(String::from(
                "at least one fusion weight must be nonzero",
            )));
        }
        Ok(())
    }
}

/// `s* = alpha_ret * s + alpha_a2t * s_a2t + alpha_t2a * s_t2a`, elementwise.
pub fn fuse_scores(
    initial: &[f64],
    rerank_a2t: &[f64],
    rerank_t2a: &[f64],
    cfg: &FusionConfig,
) -> Result<Vec<f64>> {
    if initial.len() != rerank_a2t.len() || initial.len() != rerank_t2a.len() {
        return Err(CoreError::LengthMismatch {
            left: initial.len(),
            right: rerank_a2t.len().max(rerank_t2a.len()),
        });
    }
    Ok(initial
        .iter()
        .zip(rerank_a2t.iter())
        .zip(rerank_t2a.iter())
        .map(|((&s, &a), &t)| cfg.alpha_ret * s + cfg.alpha_a2t * a + cfg.alpha_t2a * t)
        .collect())
}

/// Id-keyed view over an embedding matrix for pool lookups.
pub struct EmbeddingLookup<'a> {
    matrix: &'a EmbeddingMatrix,
    rows: BTreeMap<&'a str, usize>,
}

impl<'a> EmbeddingLookup<'a> {
    pub fn new(matrix: &'a EmbeddingMatrix) -> Self {
        let rows = matrix
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        EmbeddingLookup { matrix, rows }
    }

    pub fn row(&self, id: &str) -> Result<&'a [f64]> {
        self.rows
            .get(id)
            .map(|&i| self.matrix.row(i))
            .ok_or_else(|| CoreError::MissingGroundTruth(String::from(id)))
    }
}

/// Per-query re-ranking artifact: the pool, both directional scores, the
/// fused scores, and the final ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankPlan {
    pub query_id: String,
    /// The rescored pool (top `pool_size` of the initial ranking).
    pub pool: Vec<(String, f64)>,
    pub rerank_a2t: Vec<f64>,
    pub rerank_t2a: Vec<f64>,
    pub fused: Vec<f64>,
    /// Pool reordered by fused score (global tie rule), followed by any
    /// below-pool candidates in their initial order; those are never
    /// promoted.
    pub final_ranking: Vec<(String, f64)>,
}

/// Rescores `pool` with the pairwise scorer in both directions and fuses.
/// `query_modality` fixes which argument order is the audio-to-text
/// direction: the a2t score is always `scorer(audio, text)`.
pub fn rerank(
    query_id: &str,
    query_embedding: &[f64],
    query_modality: Modality,
    pool: &RetrievalResult,
    candidates: &EmbeddingLookup<'_>,
    scorer: &dyn PairScorer,
    cfg: &FusionConfig,
) -> Result<RerankPlan> {
    cfg.validate()?;
    let cut = cfg.pool_size.min(pool.ranked.len());
    let pool_items = &pool.ranked[..cut];
    let tail = &pool.ranked[cut..];

    let mut rerank_a2t = Vec::with_capacity(cut);
    let mut rerank_t2a = Vec::with_capacity(cut);
    for (candidate_id, _) in pool_items {
        let candidate = candidates.row(candidate_id)?;
        let (audio_side, text_side) = match query_modality {
            Modality::Audio => (query_embedding, candidate),
            Modality::Text => (candidate, query_embedding),
        };
        let (ly, ln) = scorer.score(audio_side, text_side);
        rerank_a2t.push(rank_prob(ly, ln));
        let (ly, ln) = scorer.score(text_side, audio_side);
        rerank_t2a.push(rank_prob(ly, ln));
    }
    let initial: Vec<f64> = pool_items.iter().map(|(_, s)| *s).collect();
    let fused = fuse_scores(&initial, &rerank_a2t, &rerank_t2a, cfg)?;

    let mut reordered: Vec<(String, f64)> = pool_items
        .iter()
        .zip(fused.iter())
        .map(|((id, _), &f)| (id.clone(), f))
        .collect();
    reordered.sort_by(compare_ranked);
    let mut final_ranking = reordered;
    final_ranking.extend(tail.iter().cloned());

    Ok(RerankPlan {
        query_id: String::from(query_id),
        pool: pool_items.to_vec(),
        rerank_a2t,
        rerank_t2a,
        fused,
        final_ranking,
    })
}

/// Training configuration for the pairwise scorer. Two epochs of
/// cross-entropy over (anchor, pair) vs (anchor, mined hard negative),
/// direction sampled per anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for RerankTrainConfig {
    fn default() -> Self {
        RerankTrainConfig {
            epochs: 2,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Binary cross-entropy of one scored pair plus gradients.
/// With `u = logit_yes - logit_no`, `loss = softplus(u) - label * u`.
fn bce_example(
    scorer: &BilinearScorer,
    query: &[f64],
    candidate: &[f64],
    label: f64,
    grad_weight: &mut [f64],
    grad_bias_yes: &mut f64,
    grad_bias_no: &mut f64,
) -> f64 {
    let (ly, ln) = scorer.score(query, candidate);
    let u = ly - ln;
    let p = math::sigmoid(u);
    let loss = if u >= 0.0 {
        math::ln_1p(math::exp(-u)) + u - label * u
    } else {
        math::ln_1p(math::exp(u)) - label * u
    };
    let d_u = p - label;
    // u = 2 x^T W y + (b_yes - b_no)
    for (i, xi) in query.iter().enumerate() {
        let row = &mut grad_weight[i * scorer.dim..(i + 1) * scorer.dim];
        for (slot, yj) in row.iter_mut().zip(candidate.iter()) {
            *slot += 2.0 * d_u * xi * yj;
        }
    }
    *grad_bias_yes += d_u;
    *grad_bias_no -= d_u;
    loss
}

/// Trains the bilinear scorer on (anchor, true pair) vs (anchor, hard
/// negative) pairs, sampling the direction per anchor per epoch. The true
/// pair of an item is the same id on the opposite embedding matrix.
pub fn train_reranker(
    audio_emb: &EmbeddingMatrix,
    text_emb: &EmbeddingMatrix,
    pools_a2t: &HardNegativePool,
    pools_t2a: &HardNegativePool,
    cfg: &RerankTrainConfig,
) -> Result<BilinearScorer> {
    if pools_a2t.is_empty() && pools_t2a.is_empty() {
        return Err(CoreError::EmptyPool);
    }
    if audio_emb.dim() != text_emb.dim() {
        return Err(CoreError::DimMismatch {
            left: audio_emb.dim(),
            right: text_emb.dim(),
        });
    }
    let audio = EmbeddingLookup::new(audio_emb);
    let text = EmbeddingLookup::new(text_emb);
    let dim = audio_emb.dim();
    let mut scorer = BilinearScorer::zeros(dim);
    let mut weight_opt = Optimizer::new(cfg.optimizer, dim * dim);
    let mut bias_opt = Optimizer::new(cfg.optimizer, 2);
    let mut rng = Rng::seed_from_u64(cfg.seed);

    let anchors: Vec<&str> = pools_a2t
        .entries
        .iter()
        .map(|e| e.anchor_id.as_str())
        .collect();
    if anchors.is_empty() {
        return Err(CoreError::EmptyPool);
    }
    let mut order: Vec<usize> = (0..anchors.len()).collect();

    let mut grad_weight = alloc::vec![0.0; dim * dim];
    let mut grad_bias_yes = 0.0;
    let mut grad_bias_no = 0.0;
    let mut in_batch = 0usize;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &idx in &order {
            let anchor_id = anchors[idx];
            let audio_to_text = rng.next_index(2) == 0;
            let (query, positive, negative) = if audio_to_text {
                let entry = match pools_a2t.get(anchor_id) {
                    Some(e) if !e.negatives.is_empty() => e,
                    _ => continue,
                };
                let negative_id = sample_from(entry, &mut rng);
                (
                    audio.row(anchor_id)?,
                    text.row(anchor_id)?,
                    text.row(negative_id)?,
                )
            } else {
                let entry = match pools_t2a.get(anchor_id) {
                    Some(e) if !e.negatives.is_empty() => e,
                    _ => continue,
                };
                let negative_id = sample_from(entry, &mut rng);
                (
                    text.row(anchor_id)?,
                    audio.row(anchor_id)?,
                    audio.row(negative_id)?,
                )
            };
            bce_example(
                &scorer,
                query,
                positive,
                1.0,
                &mut grad_weight,
                &mut grad_bias_yes,
                &mut grad_bias_no,
            );
            bce_example(
                &scorer,
                query,
                negative,
                0.0,
                &mut grad_weight,
                &mut grad_bias_yes,
                &mut grad_bias_no,
            );
            in_batch += 1;
            if in_batch == cfg.batch_size {
                apply_step(
                    &mut scorer,
                    &mut weight_opt,
                    &mut bias_opt,
                    &mut grad_weight,
                    &mut grad_bias_yes,
                    &mut grad_bias_no,
                    in_batch,
                    cfg.lr,
                );
                in_batch = 0;
            }
        }
    }
    if in_batch > 0 {
        apply_step(
            &mut scorer,
            &mut weight_opt,
            &mut bias_opt,
            &mut grad_weight,
            &mut grad_bias_yes,
            &mut grad_bias_no,
            in_batch,
            cfg.lr,
        );
    }
    Ok(scorer)
}

fn sample_from<'a>(entry: &'a crate::mining::PoolEntry, rng: &mut Rng) -> &'a str {
    &entry.negatives[rng.next_index(entry.negatives.len())]
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    scorer: &mut BilinearScorer,
    weight_opt: &mut Optimizer,
    bias_opt: &mut Optimizer,
    grad_weight: &mut [f64],
    grad_bias_yes: &mut f64,
    grad_bias_no: &mut f64,
    examples: usize,
    lr: f64,
) {
    let scale = 1.0 / (2.0 * examples as f64);
    for g in grad_weight.iter_mut() {
        *g *= scale;
    }
    let biases_grad = [*grad_bias_yes * scale, *grad_bias_no * scale];
    weight_opt.step(&mut scorer.weight, grad_weight, lr);
    let mut biases = [scorer.bias_yes, scorer.bias_no];
    bias_opt.step(&mut biases, &biases_grad, lr);
    scorer.bias_yes = biases[0];
    scorer.bias_no = biases[1];
    grad_weight.fill(0.0);
    *grad_bias_yes = 0.0;
    *grad_bias_no = 0.0;
}

/// Per-candidate `(id, retrieval score, a2t prob, t2a prob)` rows for one
/// pooled query.
type ScoredPool = Vec<(String, f64, f64, f64)>;

/// Grid of fusion weights for validation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub ret: Vec<f64>,
    pub a2t: Vec<f64>,
    pub t2a: Vec<f64>,
}

/// Exhaustive grid search over fusion weights, maximizing
/// `mean(R@1 a2t, R@1 t2a)` on the validation rankings. Ties prefer smaller
/// re-ranking weights (smaller `a2t + t2a`, then each component, then
/// `ret`), so re-ranking must earn its keep.
#[allow(clippy::too_many_arguments)]
pub fn tune_alphas(
    a2t_rankings: &[RetrievalResult],
    t2a_rankings: &[RetrievalResult],
    audio_emb: &EmbeddingMatrix,
    text_emb: &EmbeddingMatrix,
    scorer: &dyn PairScorer,
    gt: &GroundTruth,
    grid: &AlphaGrid,
    pool_size: usize,
) -> Result<FusionConfig> {
    if a2t_rankings.is_empty() && t2a_rankings.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    if grid.ret.is_empty() || grid.a2t.is_empty() || grid.t2a.is_empty() {
        return Err(CoreError::InvalidConfig(String::from("empty alpha grid")));
    }

    // Score every pooled pair once; fusion is then a cheap linear pass per
    // grid point.
    let audio = EmbeddingLookup::new(audio_emb);
    let text = EmbeddingLookup::new(text_emb);
    let prepare = |rankings: &[RetrievalResult],
                   query_modality: Modality|
     -> Result<Vec<(String, ScoredPool)>> {
        let mut out = Vec::with_capacity(rankings.len());
        for ranking in rankings {
            let query_embedding = match query_modality {
                Modality::Audio => audio.row(&ranking.query_id)?,
                Modality::Text => text.row(&ranking.query_id)?,
            };
            let cut = pool_size.min(ranking.ranked.len());
            let mut pool = Vec::with_capacity(cut);
            for (candidate_id, initial) in &ranking.ranked[..cut] {
                let candidate = match query_modality {
                    Modality::Audio => text.row(candidate_id)?,
                    Modality::Text => audio.row(candidate_id)?,
                };
                let (audio_side, text_side) = match query_modality {
                    Modality::Audio => (query_embedding, candidate),
                    Modality::Text => (candidate, query_embedding),
                };
                let (ly, ln) = scorer.score(audio_side, text_side);
                let r_a2t = rank_prob(ly, ln);
                let (ly, ln) = scorer.score(text_side, audio_side);
                let r_t2a = rank_prob(ly, ln);
                pool.push((candidate_id.clone(), *initial, r_a2t, r_t2a));
            }
            out.push((ranking.query_id.clone(), pool));
        }
        Ok(out)
    };
    let a2t_pools = prepare(a2t_rankings, Modality::Audio)?;
    let t2a_pools = prepare(t2a_rankings, Modality::Text)?;
    let text_to_audio = gt.text_to_audio();

    let top1_hit = |pool: &ScoredPool, cfg: &FusionConfig| -> Option<String> {
        pool.iter()
            .map(|(id, s, a, t)| {
                (
                    id.clone(),
                    cfg.alpha_ret * s + cfg.alpha_a2t * a + cfg.alpha_t2a * t,
                )
            })
            .min_by(compare_ranked)
            .map(|(id, _)| id)
    };

    let mut best: Option<(f64, FusionConfig)> = None;
    for &ret in &grid.ret {
        for &a2t in &grid.a2t {
            for &t2a in &grid.t2a {
                let cfg = FusionConfig {
                    alpha_ret: ret,
                    alpha_a2t: a2t,
                    alpha_t2a: t2a,
                    pool_size,
                };
                if cfg.validate().is_err() {
                    continue;
                }
                let mut scores = Vec::with_capacity(2);
                if !a2t_pools.is_empty() {
                    let mut hits = 0usize;
                    for (query_id, pool) in &a2t_pools {
                        let texts = gt
                            .audio_to_texts
                            .get(query_id)
                            .ok_or_else(|| CoreError::MissingGroundTruth(query_id.clone()))?;
                        if top1_hit(pool, &cfg).is_some_and(|id| texts.contains(&id)) {
                            hits += 1;
                        }
                    }
                    scores.push(hits as f64 / a2t_pools.len() as f64);
                }
                if !t2a_pools.is_empty() {
                    let mut hits = 0usize;
                    for (query_id, pool) in &t2a_pools {
                        let paired = text_to_audio
                            .get(query_id)
                            .ok_or_else(|| CoreError::MissingGroundTruth(query_id.clone()))?;
                        if top1_hit(pool, &cfg).is_some_and(|id| &id == paired) {
                            hits += 1;
                        }
                    }
                    scores.push(hits as f64 / t2a_pools.len() as f64);
                }
                let objective = scores.iter().sum::<f64>() / scores.len() as f64;
                let better = match &best {
                    None => true,
                    Some((best_obj, best_cfg)) => {
                        objective > *best_obj + 1e-12
                            || (math::abs(objective - *best_obj) <= 1e-12
                                && prefer_smaller(&cfg, best_cfg))
                    }
                };
                if better {
                    best = Some((objective, cfg));
                }
            }
        }
    }
    best.map(|(_, cfg)| cfg)
        .ok_or_else(|| CoreError::InvalidConfig(String::from("no valid grid point")))
}

fn prefer_smaller(candidate: &FusionConfig, incumbent: &FusionConfig) -> bool {
    let key = |c: &FusionConfig| {
        (
            c.alpha_a2t + c.alpha_t2a,
            c.alpha_a2t,
            c.alpha_t2a,
            c.alpha_ret,
        )
    };
    let (a, b) = (key(candidate), key(incumbent));
    (a.0, a.1, a.2, a.3) < (b.0, b.1, b.2, b.3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn rank_prob_fixed_points() {
        assert_eq!(rank_prob(0.0, 0.0), 0.5);
        assert!(rank_prob(50.0, -50.0) > 1.0 - 1e-12);
        // sigmoid(1) evaluated directly.
        assert!(math::abs(rank_prob(1.0, 0.0) - 0.731_058_578_630_004_9) < 1e-9);
    }

    #[test]
    fn rank_prob_stays_in_open_unit_interval_and_complements() {
        for (ly, ln) in [(3.0, -2.0), (-7.0, 4.0), (0.2, 0.1)] {
            let yes = rank_prob(ly, ln);
            let no = rank_prob(ln, ly);
            assert!(yes > 0.0 && yes < 1.0);
            assert!(math::abs(yes + no - 1.0) < 1e-15);
        }
    }

    #[test]
    fn identity_fusion_returns_initial_scores() {
        let cfg = FusionConfig::default();
        let s = [0.9, 0.4, 0.1];
        let fused = fuse_scores(&s, &[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5], &cfg).unwrap();
        assert_eq!(fused, s.to_vec());
    }

    #[test]
    fn unit_alphas_sum_components() {
        let cfg = FusionConfig {
            alpha_ret: 1.0,
            alpha_a2t: 1.0,
            alpha_t2a: 1.0,
            pool_size: 50,
        };
        let fused = fuse_scores(&[0.5], &[0.5], &[0.5], &cfg).unwrap();
        assert!(math::abs(fused[0] - 1.5) < 1e-15);
    }

    #[test]
    fn fusion_is_linear() {
        let cfg = FusionConfig {
            alpha_ret: 1.0,
            alpha_a2t: 0.7,
            alpha_t2a: 0.3,
            pool_size: 50,
        };
        let (s1, a1, t1) = ([0.1, 0.9], [0.5, 0.6], [0.2, 0.8]);
        let (s2, a2, t2) = ([0.4, -0.3], [0.1, 0.9], [0.7, 0.2]);
        let lhs: Vec<f64> = fuse_scores(&s1, &a1, &t1, &cfg)
            .unwrap()
            .iter()
            .zip(fuse_scores(&s2, &a2, &t2, &cfg).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        let sums: (Vec<f64>, (Vec<f64>, Vec<f64>)) = (
            s1.iter().zip(s2.iter()).map(|(a, b)| a + b).collect(),
            (
                a1.iter().zip(a2.iter()).map(|(a, b)| a + b).collect(),
                t1.iter().zip(t2.iter()).map(|(a, b)| a + b).collect(),
            ),
        );
        let rhs = fuse_scores(&sums.0, &sums.1 .0, &sums.1 .1, &cfg).unwrap();
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!(math::abs(x - y) < 1e-12);
        }
    }

    #[test]
    fn fusion_length_mismatch_errors() {
        let cfg = FusionConfig::default();
        assert!(matches!(
            fuse_scores(&[1.0], &[0.5, 0.5], &[0.5], &cfg),
            Err(CoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn all_zero_alphas_rejected() {
        let cfg = FusionConfig {
            alpha_ret: 0.0,
            alpha_a2t: 0.0,
            alpha_t2a: 0.0,
            pool_size: 50,
        };
        assert!(cfg.validate().is_err());
    }

    fn tiny_embeddings(prefix: &str, rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
        EmbeddingMatrix::from_rows(ids, rows).unwrap()
    }

    /// Oracle that recognizes the true pair by exact vector equality.
    struct OracleScorer {
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
    }

    impl PairScorer for OracleScorer {
        fn score(&self, query: &[f64], candidate: &[f64]) -> (f64, f64) {
            let matched = self
                .pairs
                .iter()
                .any(|(a, t)| (a == query && t == candidate) || (a == candidate && t == query));
            if matched {
                (50.0, -50.0)
            } else {
                (-50.0, 50.0)
            }
        }
    }

    #[test]
    fn oracle_scorer_promotes_true_match_inside_pool() {
        // Query audio a0 pairs with t2, initially ranked third.
        let audio = tiny_embeddings("a", vec![vec![1.0, 0.0]]);
        let texts = tiny_embeddings(
            "t",
            vec![vec![0.99, 0.14], vec![0.9, 0.43], vec![0.0, 1.0]],
        );
        let pool = RetrievalResult {
            query_id: "a0".to_string(),
            ranked: vec![
                ("t0".to_string(), 0.99),
                ("t1".to_string(), 0.9),
                ("t2".to_string(), 0.0),
            ],
            k: 3,
        };
        let oracle = OracleScorer {
            pairs: vec![(audio.row(0).to_vec(), texts.row(2).to_vec())],
        };
        let cfg = FusionConfig {
            alpha_ret: 0.0,
            alpha_a2t: 1.0,
            alpha_t2a: 0.0,
            pool_size: 3,
        };
        let lookup = EmbeddingLookup::new(&texts);
        let plan = rerank(
            "a0",
            audio.row(0),
            Modality::Audio,
            &pool,
            &lookup,
            &oracle,
            &cfg,
        )
        .unwrap();
        assert_eq!(plan.final_ranking[0].0, "t2");
    }

    #[test]
    fn zero_rank_alphas_preserve_initial_order() {
        let audio = tiny_embeddings("a", vec![vec![1.0, 0.0]]);
        let texts = tiny_embeddings("t", vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let pool = RetrievalResult {
            query_id: "a0".to_string(),
            ranked: vec![("t0".to_string(), 0.8), ("t1".to_string(), 0.3)],
            k: 2,
        };
        let scorer = BilinearScorer::zeros(2);
        let lookup = EmbeddingLookup::new(&texts);
        let plan = rerank(
            "a0",
            audio.row(0),
            Modality::Audio,
            &pool,
            &lookup,
            &scorer,
            &FusionConfig::default(),
        )
        .unwrap();
        let order: Vec<&str> = plan.final_ranking.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(order, vec!["t0", "t1"]);
    }

    #[test]
    fn fusion_flips_a_near_tie_when_the_scorer_disagrees() {
        // With the default alpha_ret = 1 kept, a rerank weight large enough
        // relative to the score gap flips the near-tied top-2.
        let audio = tiny_embeddings("a", vec![vec![1.0, 0.0]]);
        let texts = tiny_embeddings("t", vec![vec![0.98, 0.198], vec![0.97, 0.243]]);
        let pool = RetrievalResult {
            query_id: "a0".to_string(),
            ranked: vec![("t0".to_string(), 0.980), ("t1".to_string(), 0.978)],
            k: 2,
        };
        let oracle = OracleScorer {
            pairs: vec![(audio.row(0).to_vec(), texts.row(1).to_vec())],
        };
        let lookup = EmbeddingLookup::new(&texts);
        let keep = rerank(
            "a0",
            audio.row(0),
            Modality::Audio,
            &pool,
            &lookup,
            &oracle,
            &FusionConfig::default(),
        )
        .unwrap();
        assert_eq!(keep.final_ranking[0].0, "t0", "alpha_rank = 0 keeps order");
        let flip_cfg = FusionConfig {
            alpha_a2t: 0.5,
            ..FusionConfig::default()
        };
        let flipped = rerank(
            "a0",
            audio.row(0),
            Modality::Audio,
            &pool,
            &lookup,
            &oracle,
            &flip_cfg,
        )
        .unwrap();
        assert_eq!(flipped.final_ranking[0].0, "t1");
    }

    #[test]
    fn below_pool_candidates_are_never_promoted() {
        let audio = tiny_embeddings("a", vec![vec![1.0, 0.0]]);
        let texts = tiny_embeddings(
            "t",
            vec![vec![1.0, 0.0], vec![0.9, 0.43], vec![0.0, 1.0]],
        );
        let pool = RetrievalResult {
            query_id: "a0".to_string(),
            ranked: vec![
                ("t0".to_string(), 0.9),
                ("t1".to_string(), 0.8),
                ("t2".to_string(), 0.7),
            ],
            k: 3,
        };
        // Oracle adores t2, but the pool cuts at 2: t2 must stay last.
        let oracle = OracleScorer {
            pairs: vec![(audio.row(0).to_vec(), texts.row(2).to_vec())],
        };
        let cfg = FusionConfig {
            alpha_ret: 0.0,
            alpha_a2t: 1.0,
            alpha_t2a: 0.0,
            pool_size: 2,
        };
        let lookup = EmbeddingLookup::new(&texts);
        let plan = rerank(
            "a0",
            audio.row(0),
            Modality::Audio,
            &pool,
            &lookup,
            &oracle,
            &cfg,
        )
        .unwrap();
        assert_eq!(plan.final_ranking.last().unwrap().0, "t2");
        assert_eq!(plan.pool.len(), 2);
    }

    #[test]
    fn bce_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(19);
        let dim = 4;
        let mut scorer = BilinearScorer::zeros(dim);
        for w in scorer.weight.iter_mut() {
            *w = rng.next_gaussian() * 0.3;
        }
        scorer.bias_yes = 0.2;
        scorer.bias_no = -0.1;
        let q = rng.gaussian_vec(dim);
        let c = rng.gaussian_vec(dim);
        for label in [0.0, 1.0] {
            let mut grad_w = vec![0.0; dim * dim];
            let (mut gy, mut gn) = (0.0, 0.0);
            bce_example(&scorer, &q, &c, label, &mut grad_w, &mut gy, &mut gn);
            let eps = 1e-6;
            let loss_of = |s: &BilinearScorer| {
                let mut sink_w = vec![0.0; dim * dim];
                let (mut sy, mut sn) = (0.0, 0.0);
                bce_example(s, &q, &c, label, &mut sink_w, &mut sy, &mut sn)
            };
            for p in 0..dim * dim {
                let mut plus = scorer.clone();
                let mut minus = scorer.clone();
                plus.weight[p] += eps;
                minus.weight[p] -= eps;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let rel = math::abs(fd - grad_w[p]) / math::abs(fd).max(math::abs(grad_w[p])).max(1e-8);
                assert!(rel < 1e-5, "weight[{p}] label {label}: fd {fd} vs {}", grad_w[p]);
            }
            let mut plus = scorer.clone();
            let mut minus = scorer.clone();
            plus.bias_yes += eps;
            minus.bias_yes -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            assert!(math::abs(fd - gy) < 1e-6);
            let mut plus = scorer.clone();
            let mut minus = scorer.clone();
            plus.bias_no += eps;
            minus.bias_no -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            assert!(math::abs(fd - gn) < 1e-6);
        }
    }

    fn paired_world(
        seed: u64,
        n: usize,
        dim: usize,
    ) -> (EmbeddingMatrix, EmbeddingMatrix, HardNegativePool, HardNegativePool) {
        let mut rng = Rng::seed_from_u64(seed);
        let mut audio_rows = Vec::new();
        let mut text_rows = Vec::new();
        for _ in 0..n {
            let base = rng.gaussian_vec(dim);
            let audio: Vec<f64> = base.iter().map(|x| x + 0.05 * rng.next_gaussian()).collect();
            let text: Vec<f64> = base.iter().map(|x| x + 0.05 * rng.next_gaussian()).collect();
            audio_rows.push(crate::embedding::l2_normalize(&audio).unwrap());
            text_rows.push(crate::embedding::l2_normalize(&text).unwrap());
        }
        let ids: Vec<String> = (0..n).map(|i| format!("it{i:02}")).collect();
        let audio = EmbeddingMatrix::from_rows(ids.clone(), audio_rows).unwrap();
        let text = EmbeddingMatrix::from_rows(ids.clone(), text_rows).unwrap();
        let make_pool = |rng: &mut Rng| HardNegativePool {
            entries: ids
                .iter()
                .map(|id| PoolEntry {
                    anchor_id: id.clone(),
                    negatives: {
                        let mut others: Vec<String> =
                            ids.iter().filter(|x| *x != id).cloned().collect();
                        rng.shuffle(&mut others);
                        others.truncate(8);
                        others
                    },
                })
                .collect(),
        };
        let pa = make_pool(&mut rng);
        let pt = make_pool(&mut rng);
        (audio, text, pa, pt)
    }

    use crate::mining::PoolEntry;

    #[test]
    fn zero_lr_training_leaves_scorer_at_init() {
        let (audio, text, pa, pt) = paired_world(1, 12, 4);
        let cfg = RerankTrainConfig {
            lr: 0.0,
            ..RerankTrainConfig::default()
        };
        let scorer = train_reranker(&audio, &text, &pa, &pt, &cfg).unwrap();
        assert_eq!(scorer, BilinearScorer::zeros(4));
    }

    #[test]
    fn trained_scorer_separates_pairs_from_negatives() {
        let (audio, text, pa, pt) = paired_world(2, 24, 6);
        let cfg = RerankTrainConfig {
            epochs: 30,
            ..RerankTrainConfig::default()
        };
        let scorer = train_reranker(&audio, &text, &pa, &pt, &cfg).unwrap();
        let mut pos_mean = 0.0;
        let mut neg_mean = 0.0;
        let mut count = 0.0;
        for i in 0..audio.rows() {
            let (ly, ln) = scorer.score(audio.row(i), text.row(i));
            pos_mean += rank_prob(ly, ln);
            let j = (i + 7) % audio.rows();
            let (ly, ln) = scorer.score(audio.row(i), text.row(j));
            neg_mean += rank_prob(ly, ln);
            count += 1.0;
        }
        pos_mean /= count;
        neg_mean /= count;
        assert!(
            pos_mean > neg_mean + 0.1,
            "positives {pos_mean} vs negatives {neg_mean}"
        );
    }

    #[test]
    fn reranker_training_is_deterministic() {
        let (audio, text, pa, pt) = paired_world(3, 16, 4);
        let cfg = RerankTrainConfig::default();
        let s1 = train_reranker(&audio, &text, &pa, &pt, &cfg).unwrap();
        let s2 = train_reranker(&audio, &text, &pa, &pt, &cfg).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn tune_alphas_degenerate_grid_returns_zero_rank_weights() {
        let (audio, text, _, _) = paired_world(4, 6, 4);
        let mut gt = GroundTruth::default();
        for id in audio.ids() {
            gt.audio_to_texts
                .insert(id.clone(), [id.clone()].into_iter().collect());
        }
        let index = crate::index::Index::from_embeddings(text.clone()).unwrap();
        let rankings = index.batch_top_k(&audio, 6).unwrap();
        let grid = AlphaGrid {
            ret: vec![1.0],
            a2t: vec![0.0],
            t2a: vec![0.0],
        };
        let scorer = BilinearScorer::zeros(4);
        let cfg = tune_alphas(&rankings, &[], &audio, &text, &scorer, &gt, &grid, 6).unwrap();
        assert_eq!(cfg.alpha_a2t, 0.0);
        assert_eq!(cfg.alpha_t2a, 0.0);
        assert_eq!(cfg.alpha_ret, 1.0);
    }

    #[test]
    fn tune_alphas_matches_exhaustive_enumeration() {
        let (audio, text, pa, pt) = paired_world(5, 18, 6);
        let scorer = train_reranker(
            &audio,
            &text,
            &pa,
            &pt,
            &RerankTrainConfig {
                epochs: 20,
                ..RerankTrainConfig::default()
            },
        )
        .unwrap();
        let mut gt = GroundTruth::default();
        for id in audio.ids() {
            gt.audio_to_texts
                .insert(id.clone(), [id.clone()].into_iter().collect());
        }
        let text_index = crate::index::Index::from_embeddings(text.clone()).unwrap();
        let audio_index = crate::index::Index::from_embeddings(audio.clone()).unwrap();
        let a2t = text_index.batch_top_k(&audio, 18).unwrap();
        let t2a = audio_index.batch_top_k(&text, 18).unwrap();
        let grid = AlphaGrid {
            ret: vec![1.0],
            a2t: vec![0.0, 0.5, 1.0],
            t2a: vec![0.0, 0.5, 1.0],
        };
        let chosen =
            tune_alphas(&a2t, &t2a, &audio, &text, &scorer, &gt, &grid, 10).unwrap();

        // Exhaustive oracle over the same grid: evaluate every point via the
        // rerank path and pick the best objective with the same tie rule.
        let text_lookup = EmbeddingLookup::new(&text);
        let audio_lookup = EmbeddingLookup::new(&audio);
        let mut best: Option<(f64, FusionConfig)> = None;
        for &r in &grid.ret {
            for &a in &grid.a2t {
                for &t in &grid.t2a {
                    let cfg = FusionConfig {
                        alpha_ret: r,
                        alpha_a2t: a,
                        alpha_t2a: t,
                        pool_size: 10,
                    };
                    if cfg.validate().is_err() {
                        continue;
                    }
                    let mut hits_a = 0.0;
                    for ranking in &a2t {
                        let plan = rerank(
                            &ranking.query_id,
                            audio_lookup.row(&ranking.query_id).unwrap(),
                            Modality::Audio,
                            ranking,
                            &text_lookup,
                            &scorer,
                            &cfg,
                        )
                        .unwrap();
                        if gt.audio_to_texts[&ranking.query_id]
                            .contains(&plan.final_ranking[0].0)
                        {
                            hits_a += 1.0;
                        }
                    }
                    let mut hits_t = 0.0;
                    for ranking in &t2a {
                        let plan = rerank(
                            &ranking.query_id,
                            text_lookup.row(&ranking.query_id).unwrap(),
                            Modality::Text,
                            ranking,
                            &audio_lookup,
                            &scorer,
                            &cfg,
                        )
                        .unwrap();
                        if gt.text_to_audio()[&ranking.query_id] == plan.final_ranking[0].0 {
                            hits_t += 1.0;
                        }
                    }
                    let objective =
                        0.5 * (hits_a / a2t.len() as f64 + hits_t / t2a.len() as f64);
                    let better = match &best {
                        None => true,
                        Some((b, bc)) => {
                            objective > *b + 1e-12
                                || (math::abs(objective - *b) <= 1e-12
                                    && prefer_smaller(&cfg, bc))
                        }
                    };
                    if better {
                        best = Some((objective, cfg));
                    }
                }
            }
        }
        let oracle_cfg = best.unwrap().1;
        assert_eq!(chosen, oracle_cfg);
    }
}
