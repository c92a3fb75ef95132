//! Hard-negative mining: per anchor, the most similar opposite-modality
//! candidates that are not the anchor's positives.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::index::Index;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Candidates kept per anchor.
    pub pool_size: usize,
    /// Drop the anchor's true pair and tag-identical items from the pool.
    /// The unfiltered variant would label true matches "No" during reranker
    /// training, so filtering is the default.
    pub filter_positives: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            pool_size: 32,
            filter_positives: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub anchor_id: String,
    /// Similarity-descending candidate ids, ties by ascending id.
    pub negatives: Vec<String>,
}

/// Mined pools in anchor order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HardNegativePool {
    pub entries: Vec<PoolEntry>,
}

impl HardNegativePool {
    pub fn get(&self, anchor_id: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.anchor_id == anchor_id)
    }

    /// Anchors whose pools came out empty (degenerate corpora); callers may
    /// want to surface these.
    pub fn empty_anchor_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.negatives.is_empty())
            .map(|e| e.anchor_id.as_str())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mines the top `cfg.pool_size` candidates per anchor by cosine similarity,
/// excluding each anchor's positive set (true pair plus tag-identical ids).
pub fn mine_hard_negatives(
    anchors: &EmbeddingMatrix,
    candidates: &Index,
    positives: &BTreeMap<String, BTreeSet<String>>,
    cfg: &MiningConfig,
) -> Result<HardNegativePool> {
    if candidates.is_empty() {
        return Err(CoreError::EmptyCandidates);
    }
    if cfg.pool_size == 0 {
        return Err(CoreError::InvalidConfig(String::from("pool_size must be >= 1")));
    }
    let mut entries = Vec::with_capacity(anchors.rows());
    for i in 0..anchors.rows() {
        let anchor_id = &anchors.ids()[i];
        let excluded: Option<&BTreeSet<String>> = if cfg.filter_positives {
            positives.get(anchor_id)
        } else {
            None
        };
        let overfetch = cfg.pool_size + excluded.map_or(0, |e| e.len());
        let result = candidates.top_k(anchor_id, anchors.row(i), overfetch.min(candidates.len()).max(1))?;
        let negatives: Vec<String> = result
            .ranked
            .into_iter()
            .filter(|(id, _)| excluded.is_none_or(|e| !e.contains(id)))
            .take(cfg.pool_size)
            .map(|(id, _)| id)
            .collect();
        entries.push(PoolEntry {
            anchor_id: anchor_id.clone(),
            negatives,
        });
    }
    Ok(HardNegativePool { entries })
}

/// Uniform draw from a mined pool.
pub fn sample_negative<'a>(entry: &'a PoolEntry, rng: &mut Rng) -> Result<&'a str> {
    if entry.negatives.is_empty() {
        return Err(CoreError::EmptyPool);
    }
    Ok(&entry.negatives[rng.next_index(entry.negatives.len())])
}
