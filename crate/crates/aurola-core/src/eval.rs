//! Evaluation protocols: Recall@K over caption benchmarks, mAP over label
//! benchmarks, and the RBF-kernel MMD modality-gap diagnostic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::index::RetrievalResult;
use crate::math;

/// Pairing and label annotations used by the metrics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Audio id -> its paired caption ids (1-5 per audio).
    pub audio_to_texts: BTreeMap<String, BTreeSet<String>>,
    /// Audio id -> class label set.
    pub audio_labels: BTreeMap<String, BTreeSet<String>>,
    /// Class label -> the text item embedding that label, when present.
    pub label_items: BTreeMap<String, String>,
}

impl GroundTruth {
    /// Caption id -> its audio id, derived from `audio_to_texts`.
    pub fn text_to_audio(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (audio, texts) in &self.audio_to_texts {
            for text in texts {
                out.insert(text.clone(), audio.clone());
            }
        }
        out
    }
}

/// Recall@K summary in both directions plus optional label-benchmark mAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub recall_a2t: Vec<f64>,
    pub recall_t2a: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_a2t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_t2a: Option<f64>,
}

/// Audio-to-text Recall@K: an audio counts as a hit at `k` when the best
/// ranked of its ground-truth captions sits within the top `k`.
pub fn recall_at_k_a2t(
    rankings: &[RetrievalResult],
    gt: &GroundTruth,
    ks: &[usize],
) -> Result<Vec<f64>> {
    if rankings.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let mut hits = alloc::vec![0usize; ks.len()];
    for ranking in rankings {
        let texts = gt
            .audio_to_texts
            .get(&ranking.query_id)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| CoreError::MissingGroundTruth(ranking.query_id.clone()))?;
        let best = texts
            .iter()
            .filter_map(|t| ranking.rank_of(t))
            .min()
            .unwrap_or(usize::MAX);
        for (slot, &k) in hits.iter_mut().zip(ks.iter()) {
            if best <= k {
                *slot += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / rankings.len() as f64)
        .collect())
}

/// Text-to-audio Recall@K: every caption is an independent query; a hit at
/// `k` means its paired audio is ranked within the top `k`. Averaged over
/// all text queries.
pub fn recall_at_k_t2a(
    rankings: &[RetrievalResult],
    gt: &GroundTruth,
    ks: &[usize],
) -> Result<Vec<f64>> {
    if rankings.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let text_to_audio = gt.text_to_audio();
    let mut hits = alloc::vec![0usize; ks.len()];
    for ranking in rankings {
        let audio = text_to_audio
            .get(&ranking.query_id)
            .ok_or_else(|| CoreError::MissingGroundTruth(ranking.query_id.clone()))?;
        let rank = ranking.rank_of(audio).unwrap_or(usize::MAX);
        for (slot, &k) in hits.iter_mut().zip(ks.iter()) {
            if rank <= k {
                *slot += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / rankings.len() as f64)
        .collect())
}

/// Interpolation-free average precision over a ranked binary relevance
/// list: `AP = (1/R) * sum over relevant ranks r of precision@r`.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let total_relevant = relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return Err(CoreError::NoRelevant);
    }
    let mut seen = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in relevance.iter().enumerate() {
        if rel {
            seen += 1;
            sum += seen as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Audio-to-text mAP over class labels: each ranking orders class ids for
/// one audio query; relevance is membership in that audio's label set.
pub fn map_a2t(
    class_rankings: &[RetrievalResult],
    label_sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<f64> {
    if class_rankings.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let mut sum = 0.0;
    for ranking in class_rankings {
        let labels = label_sets
            .get(&ranking.query_id)
            .filter(|l| !l.is_empty())
            .ok_or_else(|| CoreError::MissingGroundTruth(ranking.query_id.clone()))?;
        let relevance: Vec<bool> = ranking
            .ranked
            .iter()
            .map(|(class, _)| labels.contains(class))
            .collect();
        sum += average_precision(&relevance)?;
    }
    Ok(sum / class_rankings.len() as f64)
}

/// Text-to-audio mAP: each ranking orders audio items for one class-label
/// query; relevance is the audio carrying that label. Mean of per-class APs.
pub fn map_t2a(
    audio_rankings: &[RetrievalResult],
    label_sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<f64> {
    if audio_rankings.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let mut sum = 0.0;
    for ranking in audio_rankings {
        let class = &ranking.query_id;
        let relevance: Vec<bool> = ranking
            .ranked
            .iter()
            .map(|(audio, _)| {
                label_sets
                    .get(audio)
                    .is_some_and(|labels| labels.contains(class))
            })
            .collect();
        if !relevance.iter().any(|&r| r) {
            return Err(CoreError::EmptyClass(class.clone()));
        }
        sum += average_precision(&relevance)?;
    }
    Ok(sum / audio_rankings.len() as f64)
}

/// Median pairwise Euclidean distance over the pooled rows; the usual RBF
/// bandwidth heuristic. Falls back to 1.0 when all points coincide.
fn median_heuristic(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> f64 {
    let mut rows: Vec<&[f64]> = Vec::with_capacity(x.rows() + y.rows());
    for i in 0..x.rows() {
        rows.push(x.row(i));
    }
    for i in 0..y.rows() {
        rows.push(y.row(i));
    }
    let mut distances = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            distances.push(math::sqrt(math::squared_distance(rows[i], rows[j])));
        }
    }
    if distances.is_empty() {
        return 1.0;
    }
    distances.sort_by(f64::total_cmp);
    let mid = distances.len() / 2;
    let median = if distances.len() % 2 == 1 {
        distances[mid]
    } else {
        0.5 * (distances[mid - 1] + distances[mid])
    };
    if median > 1e-12 {
        median
    } else {
        1.0
    }
}

/// Maximum mean discrepancy between two embedding clouds under the RBF
/// kernel `k(a,b) = exp(-||a-b||^2 / (2 sigma^2))`. Biased V-statistic;
/// returns `sqrt(max(mmd^2, 0))`. `bandwidth` defaults to the median
/// pairwise-distance heuristic over the pooled rows.
pub fn mmd_rbf(x: &EmbeddingMatrix, y: &EmbeddingMatrix, bandwidth: Option<f64>) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(CoreError::EmptySet);
    }
    if x.dim() != y.dim() {
        return Err(CoreError::DimMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    let sigma = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "bandwidth must be positive and finite, got {b}"
            )))
        }
        None => median_heuristic(x, y),
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kernel_mean = |a: &EmbeddingMatrix, b: &EmbeddingMatrix| -> f64 {
        let mut sum = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                sum += math::exp(-gamma * math::squared_distance(a.row(i), b.row(j)));
            }
        }
        sum / (a.rows() as f64 * b.rows() as f64)
    };
    let mmd_sq = kernel_mean(x, x) + kernel_mean(y, y) - 2.0 * kernel_mean(x, y);
    Ok(math::sqrt(mmd_sq.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn ranking(query: &str, ids: &[&str]) -> RetrievalResult {
        RetrievalResult {
            query_id: query.to_string(),
            ranked: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 1.0 - i as f64 * 0.1))
                .collect(),
            k: ids.len(),
        }
    }

    fn gt_single(audio: &str, texts: &[&str]) -> GroundTruth {
        let mut gt = GroundTruth::default();
        gt.audio_to_texts.insert(
            audio.to_string(),
            texts.iter().map(|t| t.to_string()).collect(),
        );
        gt
    }

    #[test]
    fn a2t_hit_at_one_when_gt_tops_the_list() {
        let gt = gt_single("a0", &["t0"]);
        let r = vec![ranking("a0", &["t0", "t1", "t2", "t3", "t4"])];
        let values = recall_at_k_a2t(&r, &gt, &[1, 5]).unwrap();
        assert_eq!(values, vec![1.0, 1.0]);
    }

    #[test]
    fn a2t_best_caption_third_misses_at_one_hits_at_five() {
        let gt = gt_single("a0", &["t2", "t9"]);
        let r = vec![ranking("a0", &["t0", "t1", "t2", "t3", "t4"])];
        let values = recall_at_k_a2t(&r, &gt, &[1, 5]).unwrap();
        assert_eq!(values, vec![0.0, 1.0]);
    }

    #[test]
    fn a2t_missing_ground_truth_errors() {
        let gt = gt_single("a0", &["t0"]);
        let r = vec![ranking("a1", &["t0"])];
        assert!(matches!(
            recall_at_k_a2t(&r, &gt, &[1]),
            Err(CoreError::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn t2a_perfect_diagonal_scores_one() {
        let mut gt = GroundTruth::default();
        for i in 0..3 {
            gt.audio_to_texts.insert(
                format!("a{i}"),
                [format!("t{i}")].into_iter().collect(),
            );
        }
        let r: Vec<RetrievalResult> = (0..3)
            .map(|i| {
                let others: Vec<String> =
                    (0..3).filter(|&j| j != i).map(|j| format!("a{j}")).collect();
                let mut ids = vec![format!("a{i}")];
                ids.extend(others);
                let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
                ranking(&format!("t{i}"), &refs)
            })
            .collect();
        assert_eq!(recall_at_k_t2a(&r, &gt, &[1]).unwrap(), vec![1.0]);
    }

    #[test]
    fn t2a_anti_diagonal_scores_zero_at_one() {
        let mut gt = GroundTruth::default();
        gt.audio_to_texts
            .insert("a0".to_string(), ["t0".to_string()].into_iter().collect());
        gt.audio_to_texts
            .insert("a1".to_string(), ["t1".to_string()].into_iter().collect());
        let r = vec![ranking("t0", &["a1", "a0"]), ranking("t1", &["a0", "a1"])];
        let values = recall_at_k_t2a(&r, &gt, &[1, 2]).unwrap();
        assert_eq!(values, vec![0.0, 1.0]);
    }

    #[test]
    fn average_precision_hand_worked_cases() {
        assert_eq!(average_precision(&[true, false, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, true]).unwrap(), 0.5);
        // (1 + 2/3) / 2
        let ap = average_precision(&[true, false, true, false]).unwrap();
        assert!(math::abs(ap - 0.833_333_333_333_333_3) < 1e-9);
        assert_eq!(
            average_precision(&[false, false]).unwrap_err(),
            CoreError::NoRelevant
        );
    }

    #[test]
    fn map_a2t_hand_worked_cases() {
        let mut labels = BTreeMap::new();
        labels.insert(
            "a0".to_string(),
            ["dog".to_string()].into_iter().collect::<BTreeSet<_>>(),
        );
        let r = vec![ranking("a0", &["dog", "cat", "rain"])];
        assert!(math::abs(map_a2t(&r, &labels).unwrap() - 1.0) < 1e-12);

        let mut labels2 = BTreeMap::new();
        labels2.insert(
            "a0".to_string(),
            ["dog".to_string(), "rain".to_string()]
                .into_iter()
                .collect::<BTreeSet<_>>(),
        );
        let r2 = vec![ranking("a0", &["dog", "cat", "rain"])];
        let expected = (1.0 + 2.0 / 3.0) / 2.0;
        assert!(math::abs(map_a2t(&r2, &labels2).unwrap() - expected) < 1e-12);
    }

    #[test]
    fn map_t2a_single_class_and_empty_class() {
        let mut labels = BTreeMap::new();
        labels.insert(
            "a0".to_string(),
            ["dog".to_string()].into_iter().collect::<BTreeSet<_>>(),
        );
        labels.insert("a1".to_string(), BTreeSet::new());
        let r = vec![ranking("dog", &["a0", "a1"])];
        assert!(math::abs(map_t2a(&r, &labels).unwrap() - 1.0) < 1e-12);

        let r_bad = vec![ranking("cat", &["a0", "a1"])];
        assert!(matches!(
            map_t2a(&r_bad, &labels),
            Err(CoreError::EmptyClass(_))
        ));
    }

    fn gaussian_cloud(n: usize, dim: usize, shift: f64, seed: u64) -> EmbeddingMatrix {
        let mut rng = Rng::seed_from_u64(seed);
        let ids = (0..n).map(|i| format!("p{seed}_{i}")).collect();
        let rows = (0..n)
            .map(|_| {
                let mut v = rng.gaussian_vec(dim);
                v[0] += shift;
                v
            })
            .collect();
        EmbeddingMatrix::from_rows(ids, rows).unwrap()
    }

    #[test]
    fn mmd_of_identical_sets_is_zero() {
        let x = gaussian_cloud(40, 6, 0.0, 3);
        let value = mmd_rbf(&x, &x, None).unwrap();
        assert!(value < 1e-9, "mmd {value}");
    }

    #[test]
    fn mmd_separated_clusters_is_positive() {
        let x = gaussian_cloud(40, 6, 0.0, 4);
        let y = gaussian_cloud(40, 6, 8.0, 5);
        assert!(mmd_rbf(&x, &y, None).unwrap() > 0.1);
    }

    #[test]
    fn mmd_is_symmetric() {
        let x = gaussian_cloud(20, 4, 0.0, 6);
        let y = gaussian_cloud(25, 4, 1.0, 7);
        let a = mmd_rbf(&x, &y, None).unwrap();
        let b = mmd_rbf(&y, &x, None).unwrap();
        assert!(math::abs(a - b) < 1e-12);
    }

    #[test]
    fn mmd_rejects_empty_and_mismatched() {
        let x = gaussian_cloud(5, 4, 0.0, 8);
        let empty = EmbeddingMatrix::from_rows(vec![], vec![]).unwrap();
        assert_eq!(mmd_rbf(&x, &empty, None).unwrap_err(), CoreError::EmptySet);
        let y = gaussian_cloud(5, 3, 0.0, 9);
        assert!(matches!(
            mmd_rbf(&x, &y, None),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn metrics_are_invariant_under_id_relabeling() {
        let mut rng = Rng::seed_from_u64(77);
        let mut gt = GroundTruth::default();
        let mut rankings = Vec::new();
        for q in 0..6 {
            gt.audio_to_texts.insert(
                format!("a{q}"),
                [format!("t{q}")].into_iter().collect(),
            );
            let mut ids: Vec<String> = (0..6).map(|j| format!("t{j}")).collect();
            rng.shuffle(&mut ids);
            let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
            rankings.push(ranking(&format!("a{q}"), &refs));
        }
        let rename = |id: &str| format!("X_{id}_Y");
        let mut gt2 = GroundTruth::default();
        for (audio, texts) in &gt.audio_to_texts {
            gt2.audio_to_texts.insert(
                rename(audio),
                texts.iter().map(|t| rename(t)).collect(),
            );
        }
        let rankings2: Vec<RetrievalResult> = rankings
            .iter()
            .map(|r| RetrievalResult {
                query_id: rename(&r.query_id),
                ranked: r.ranked.iter().map(|(id, s)| (rename(id), *s)).collect(),
                k: r.k,
            })
            .collect();
        let ks = [1, 2, 4];
        assert_eq!(
            recall_at_k_a2t(&rankings, &gt, &ks).unwrap(),
            recall_at_k_a2t(&rankings2, &gt2, &ks).unwrap()
        );
    }

    #[test]
    fn recall_is_nondecreasing_in_k() {
        let mut rng = Rng::seed_from_u64(10);
        let mut gt = GroundTruth::default();
        let mut rankings = Vec::new();
        for q in 0..10 {
            let audio = format!("a{q}");
            gt.audio_to_texts.insert(
                audio.clone(),
                [format!("t{q}")].into_iter().collect(),
            );
            let mut ids: Vec<String> = (0..10).map(|j| format!("t{j}")).collect();
            rng.shuffle(&mut ids);
            let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
            rankings.push(ranking(&audio, &refs));
        }
        let values = recall_at_k_a2t(&rankings, &gt, &[1, 2, 3, 5, 10]).unwrap();
        for pair in values.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-12);
        }
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
