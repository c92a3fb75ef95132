//! Domain types: items, caption bundles, and the corpus that holds them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One corpus entry: an audio clip or a standalone text (eval caption,
/// class-label prompt). Features are the precomputed per-modality vectors
/// that stand in for an external embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub modality: Modality,
    pub split: Split,
    pub features: Vec<f64>,
    /// Normalized tag set (sorted, deduplicated); empty when untagged.
    pub tags: Vec<String>,
    pub class_labels: Vec<String>,
}

/// Multi-granular caption features attached to an audio item: a long
/// narrative, a short summary, and a tag-style description.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionBundle {
    pub item_id: String,
    pub long_features: Vec<f64>,
    pub short_features: Vec<f64>,
    pub tag_features: Vec<f64>,
    pub tags: Vec<String>,
    pub class_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Long,
    Short,
    Tag,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Long, Granularity::Short, Granularity::Tag];

    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Long => "long",
            Granularity::Short => "short",
            Granularity::Tag => "tag",
        }
    }
}

impl CaptionBundle {
    pub fn features(&self, granularity: Granularity) -> &[f64] {
        match granularity {
            Granularity::Long => &self.long_features,
            Granularity::Short => &self.short_features,
            Granularity::Tag => &self.tag_features,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        for (name, v) in [
            ("long_features", &self.long_features),
            ("short_features", &self.short_features),
            ("tag_features", &self.tag_features),
        ] {
            if v.len() != feature_dim {
                return Err(CoreError::DimMismatch {
                    left: v.len(),
                    right: feature_dim,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite(name));
            }
        }
        Ok(())
    }
}

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize_tag(raw: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for token in raw.split_whitespace() {
        if pending_space {
            out.push(' ');
        }
        for ch in token.chars() {
            out.extend(ch.to_lowercase());
        }
        pending_space = true;
    }
    out
}

/// Normalize, deduplicate, and sort a tag list. Set equality over the result
/// is plain `Vec` equality.
pub fn normalize_tag_set(raw: &[String]) -> Vec<String> {
    let set: BTreeSet<String> = raw
        .iter()
        .map(|t| normalize_tag(t))
        .filter(|t| !t.is_empty())
        .collect();
    set.into_iter().collect()
}

/// An in-memory corpus: items in a stable order plus caption bundles keyed
/// by item id. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    feature_dim: usize,
    items: Vec<Item>,
    index_of: BTreeMap<String, usize>,
    bundles: BTreeMap<String, CaptionBundle>,
}

impl Corpus {
    pub fn new(
        feature_dim: usize,
        items: Vec<Item>,
        bundles: Vec<CaptionBundle>,
    ) -> Result<Self> {
        let mut index_of = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if item.features.len() != feature_dim {
                return Err(CoreError::DimMismatch {
                    left: item.features.len(),
                    right: feature_dim,
                });
            }
            if item.features.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite("item features"));
            }
            if index_of.insert(item.id.clone(), i).is_some() {
                return Err(CoreError::DuplicateId(item.id.clone()));
            }
        }
        let mut bundle_map = BTreeMap::new();
        for bundle in bundles {
            if !index_of.contains_key(&bundle.item_id) {
                return Err(CoreError::MissingGroundTruth(bundle.item_id));
            }
            bundle.validate(feature_dim)?;
            if bundle_map.insert(bundle.item_id.clone(), bundle).is_some() {
                return Err(CoreError::DuplicateId(
                    bundle_map.keys().last().unwrap().to_string(),
                ));
            }
        }
        Ok(Corpus {
            feature_dim,
            items,
            index_of,
            bundles: bundle_map,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index_of.get(id).map(|&i| &self.items[i])
    }

    pub fn bundle(&self, id: &str) -> Option<&CaptionBundle> {
        self.bundles.get(id)
    }

    pub fn bundles(&self) -> impl Iterator<Item = &CaptionBundle> {
        self.bundles.values()
    }

    /// Audio items of a split that carry a full caption bundle.
    pub fn trainable_items(&self, split: Split) -> Vec<&Item> {
        self.items
            .iter()
            .filter(|it| {
                it.modality == Modality::Audio
                    && it.split == split
                    && self.bundles.contains_key(&it.id)
            })
            .collect()
    }

    pub fn items_of(&self, modality: Modality, split: Split) -> Vec<&Item> {
        self.items
            .iter()
            .filter(|it| it.modality == modality && it.split == split)
            .collect()
    }
}
