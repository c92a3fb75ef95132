//! Glue between the stages: embed a corpus split, run bidirectional
//! retrieval, rescore with a pairwise scorer, and produce metric reports.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::eval::{self, GroundTruth, MetricReport};
use crate::head::ProjectionHead;
use crate::index::{Index, RetrievalResult};
use crate::rerank::{rerank, EmbeddingLookup, FusionConfig, PairScorer};
use crate::types::{Corpus, Item, Modality, Split};

/// Forward a list of items through a head, keyed by their ids.
pub fn embed_items(items: &[&Item], head: &ProjectionHead) -> Result<EmbeddingMatrix> {
    let ids: Vec<String> = items.iter().map(|it| it.id.clone()).collect();
    let features: Vec<Vec<f64>> = items.iter().map(|it| it.features.clone()).collect();
    head.forward(ids, &features)
}

/// Caption-side embeddings for audio items, at a fixed granularity.
pub fn embed_captions(
    corpus: &Corpus,
    items: &[&Item],
    text_head: &ProjectionHead,
    granularity: crate::types::Granularity,
) -> Result<EmbeddingMatrix> {
    let mut ids = Vec::with_capacity(items.len());
    let mut features = Vec::with_capacity(items.len());
    for item in items {
        let bundle = corpus
            .bundle(&item.id)
            .ok_or_else(|| CoreError::MissingGranularity(item.id.clone()))?;
        ids.push(item.id.clone());
        features.push(bundle.features(granularity).to_vec());
    }
    text_head.forward(ids, &features)
}

/// Bidirectional retrieval over one split: audio queries against the
/// split's evaluation captions and vice versa.
pub struct SplitRetrieval {
    pub a2t: Vec<RetrievalResult>,
    pub t2a: Vec<RetrievalResult>,
    pub audio_emb: EmbeddingMatrix,
    pub caption_emb: EmbeddingMatrix,
}

/// Embeds the split's audio items and their ground-truth captions, then
/// retrieves `depth` candidates in both directions (clamped to corpus size).
pub fn retrieve_split(
    corpus: &Corpus,
    gt: &GroundTruth,
    audio_head: &ProjectionHead,
    text_head: &ProjectionHead,
    split: Split,
    depth: usize,
) -> Result<SplitRetrieval> {
    let audio_items: Vec<&Item> = corpus
        .items_of(Modality::Audio, split)
        .into_iter()
        .filter(|it| gt.audio_to_texts.contains_key(&it.id))
        .collect();
    if audio_items.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let mut caption_items: Vec<&Item> = Vec::new();
    for item in &audio_items {
        for caption_id in &gt.audio_to_texts[&item.id] {
            let caption = corpus
                .get(caption_id)
                .ok_or_else(|| CoreError::MissingGroundTruth(caption_id.clone()))?;
            caption_items.push(caption);
        }
    }
    let audio_emb = embed_items(&audio_items, audio_head)?;
    let caption_emb = embed_items(&caption_items, text_head)?;
    let caption_index = Index::from_embeddings(caption_emb.clone())?;
    let audio_index = Index::from_embeddings(audio_emb.clone())?;
    let a2t = caption_index.batch_top_k(&audio_emb, depth.min(caption_emb.rows()).max(1))?;
    let t2a = audio_index.batch_top_k(&caption_emb, depth.min(audio_emb.rows()).max(1))?;
    Ok(SplitRetrieval {
        a2t,
        t2a,
        audio_emb,
        caption_emb,
    })
}

/// Recall report over precomputed rankings.
pub fn recall_report(
    a2t: &[RetrievalResult],
    t2a: &[RetrievalResult],
    gt: &GroundTruth,
    ks: &[usize],
) -> Result<MetricReport> {
    Ok(MetricReport {
        ks: ks.to_vec(),
        recall_a2t: eval::recall_at_k_a2t(a2t, gt, ks)?,
        recall_t2a: eval::recall_at_k_t2a(t2a, gt, ks)?,
        map_a2t: None,
        map_t2a: None,
    })
}

/// `mean(R@1 a2t, R@1 t2a)`, the scalar both ablations compare.
pub fn mean_r1(report: &MetricReport) -> f64 {
    0.5 * (report.recall_a2t[0] + report.recall_t2a[0])
}

/// Label-benchmark mAP in both directions: audio queries ranked over the
/// embedded class labels, and class labels ranked over the split's audio.
pub fn label_map_scores(
    corpus: &Corpus,
    gt: &GroundTruth,
    audio_head: &ProjectionHead,
    text_head: &ProjectionHead,
    split: Split,
) -> Result<(f64, f64)> {
    if gt.label_items.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let audio_items: Vec<&Item> = corpus.items_of(Modality::Audio, split);
    if audio_items.is_empty() {
        return Err(CoreError::EmptyValidation);
    }
    let label_ids: Vec<&String> = gt.label_items.values().collect();
    let label_items: Vec<&Item> = label_ids
        .iter()
        .map(|id| {
            corpus
                .get(id)
                .ok_or_else(|| CoreError::MissingGroundTruth((*id).clone()))
        })
        .collect::<Result<_>>()?;
    let label_of: BTreeMap<String, String> = gt
        .label_items
        .iter()
        .map(|(class, id)| (id.clone(), class.clone()))
        .collect();

    let audio_emb = embed_items(&audio_items, audio_head)?;
    let label_emb = embed_items(&label_items, text_head)?;
    let label_index = Index::from_embeddings(label_emb.clone())?;
    let audio_index = Index::from_embeddings(audio_emb.clone())?;

    // Audio -> classes: rename ranked label-item ids to class names.
    let mut class_rankings = label_index.batch_top_k(&audio_emb, label_emb.rows())?;
    for ranking in class_rankings.iter_mut() {
        for entry in ranking.ranked.iter_mut() {
            entry.0 = label_of[&entry.0].clone();
        }
    }
    let map_a2t = eval::map_a2t(&class_rankings, &gt.audio_labels)?;

    // Class -> audios: one query per class label.
    let mut audio_rankings = audio_index.batch_top_k(&label_emb, audio_emb.rows())?;
    for ranking in audio_rankings.iter_mut() {
        ranking.query_id = label_of[&ranking.query_id].clone();
    }
    let map_t2a = eval::map_t2a(&audio_rankings, &gt.audio_labels)?;
    Ok((map_a2t, map_t2a))
}

/// Rescores every ranking with the pairwise scorer; the output rankings
/// carry the fused ordering and plug into the same metrics.
pub fn rerank_all(
    rankings: &[RetrievalResult],
    queries: &EmbeddingMatrix,
    query_modality: Modality,
    candidates: &EmbeddingMatrix,
    scorer: &dyn PairScorer,
    cfg: &FusionConfig,
) -> Result<Vec<RetrievalResult>> {
    let query_lookup = EmbeddingLookup::new(queries);
    let candidate_lookup = EmbeddingLookup::new(candidates);
    let mut out = Vec::with_capacity(rankings.len());
    for ranking in rankings {
        let plan = rerank(
            &ranking.query_id,
            query_lookup.row(&ranking.query_id)?,
            query_modality,
            ranking,
            &candidate_lookup,
            scorer,
            cfg,
        )?;
        out.push(RetrievalResult {
            query_id: plan.query_id,
            ranked: plan.final_ranking,
            k: ranking.k,
        });
    }
    Ok(out)
}

/// Exclusion sets for hard-negative mining: each trainable anchor excludes
/// its own id (the true pair on the opposite side) and every tag-identical
/// item.
pub fn mining_positives(corpus: &Corpus, split: Split) -> BTreeMap<String, BTreeSet<String>> {
    let items = corpus.trainable_items(split);
    let mut by_tags: BTreeMap<&[String], Vec<&str>> = BTreeMap::new();
    for item in &items {
        by_tags.entry(&item.tags).or_default().push(&item.id);
    }
    let mut out = BTreeMap::new();
    for item in &items {
        let mut set = BTreeSet::new();
        set.insert(item.id.clone());
        if !item.tags.is_empty() {
            if let Some(mates) = by_tags.get(item.tags.as_slice()) {
                for mate in mates {
                    set.insert((*mate).into());
                }
            }
        }
        out.insert(item.id.clone(), set);
    }
    out
}
