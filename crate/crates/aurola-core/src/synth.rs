//! Deterministic synthetic corpus generator.
//!
//! Builds paired audio/text features around class prototypes on the unit
//! sphere, with a semantic hierarchy that mirrors multi-granular captions:
//! tag-group offsets shared by colliding items, per-item offsets that fade
//! from long to tag granularity, and an optional fixed random rotation
//! separating the raw audio space from the text space. All features are
//! quantized to f32 precision so on-disk round trips are exact.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::GroundTruth;
use crate::math;
use crate::rng::Rng;
use crate::types::{CaptionBundle, Corpus, Item, Modality, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationKind {
    #[default]
    Random,
    Identity,
}

/// Share of the per-item offset kept at each granularity (long, short, tag):
/// tag captions collapse onto the group nucleus, long captions keep the
/// item's identity.
pub const GRANULARITY_SHARE: [f64; 3] = [1.0, 0.6, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub items_per_class: usize,
    pub feature_dim: usize,
    /// Gaussian noise on audio features.
    pub view_noise_audio: f64,
    /// Gaussian noise on held-out evaluation captions.
    pub view_noise_text: f64,
    /// Gaussian noise per caption granularity (long <= short <= tag).
    pub granularity_noise: [f64; 3],
    /// Items per shared tag-set group within a class (1 disables collisions).
    pub tag_collision: usize,
    /// Evaluation captions per val/test audio (1..=5).
    pub n_captions_eval: usize,
    /// Scale of the per-item offset from the group nucleus.
    pub instance_spread: f64,
    /// Scale of the per-group offset from the class prototype.
    pub group_spread: f64,
    /// Share of the per-item offset visible in evaluation captions (1.0 =
    /// captions fully identify their item; smaller values make held-out
    /// captions coarser, like terse human annotations).
    pub eval_caption_share: f64,
    pub audio_rotation: RotationKind,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 8,
            items_per_class: 64,
            feature_dim: 32,
            view_noise_audio: 0.25,
            view_noise_text: 0.1,
            granularity_noise: [1.0, 1.1, 1.2],
            tag_collision: 4,
            n_captions_eval: 3,
            instance_spread: 0.3,
            group_spread: 0.7,
            eval_caption_share: 1.0,
            audio_rotation: RotationKind::Random,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CoreError::InvalidConfig("n_classes must be >= 2".to_string()));
        }
        if self.items_per_class == 0 {
            return Err(CoreError::InvalidConfig("items_per_class must be >= 1".to_string()));
        }
        if self.feature_dim < 4 {
            return Err(CoreError::InvalidConfig("feature_dim must be >= 4".to_string()));
        }
        if self.tag_collision == 0 {
            return Err(CoreError::InvalidConfig("tag_collision must be >= 1".to_string()));
        }
        if !(1..=5).contains(&self.n_captions_eval) {
            return Err(CoreError::InvalidConfig(
                "n_captions_eval must be in 1..=5".to_string(),
            ));
        }
        if !(self.eval_caption_share.is_finite() && (0.0..=1.0).contains(&self.eval_caption_share)) {
            return Err(CoreError::InvalidConfig(
                "eval_caption_share must be in [0, 1]".to_string(),
            ));
        }
        let sigmas = [
            self.view_noise_audio,
            self.view_noise_text,
            self.granularity_noise[0],
            self.granularity_noise[1],
            self.granularity_noise[2],
            self.instance_spread,
            self.group_spread,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CoreError::InvalidConfig("noise scales must be >= 0".to_string()));
        }
        if self.granularity_noise[0] > self.granularity_noise[1]
            || self.granularity_noise[1] > self.granularity_noise[2]
        {
            return Err(CoreError::InvalidConfig(
                "granularity_noise must be ordered long <= short <= tag".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub ground_truth: GroundTruth,
}

/// Quantize to f32 precision so written features round-trip bit-exactly.
fn canonical(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = *x as f32 as f64;
    }
    v
}

fn add_scaled(base: &mut [f64], delta: &[f64], scale: f64) {
    for (b, d) in base.iter_mut().zip(delta.iter()) {
        *b += scale * d;
    }
}

fn noisy(base: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    base.iter().map(|x| x + sigma * rng.next_gaussian()).collect()
}

/// Orthonormal matrix (row-major) via Gram-Schmidt on Gaussian rows.
fn random_rotation(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = rng.gaussian_vec(dim);
        for prev in &rows {
            let proj = math::dot(&v, prev);
            add_scaled(&mut v, prev, -proj);
        }
        let norm = math::l2_norm(&v);
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        rows.push(v);
    }
    rows.into_iter().flatten().collect()
}

fn rotate(matrix: Option<&[f64]>, v: &[f64]) -> Vec<f64> {
    match matrix {
        None => v.to_vec(),
        Some(m) => {
            let dim = v.len();
            (0..dim)
                .map(|i| math::dot(&m[i * dim..(i + 1) * dim], v))
                .collect()
        }
    }
}

/// Split by position within the class: 14/3/3 per block of 20.
fn split_for(index_in_class: usize) -> Split {
    match index_in_class % 20 {
        0..=13 => Split::Train,
        14..=16 => Split::Val,
        _ => Split::Test,
    }
}

/// Generates the corpus and its ground truth. Fully deterministic: the same
/// config (seed included) reproduces identical features bit for bit.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;
    let rotation = match cfg.audio_rotation {
        RotationKind::Random => Some(random_rotation(dim, &mut rng)),
        RotationKind::Identity => None,
    };
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| crate::embedding::l2_normalize(&rng.gaussian_vec(dim)).expect("gaussian row"))
        .collect();

    let mut items = Vec::new();
    let mut bundles = Vec::new();
    let mut ground_truth = GroundTruth::default();

    let mut global_index = 0usize;
    for (class_index, prototype) in prototypes.iter().enumerate() {
        let class_name = format!("class{class_index:02}");
        let mut group_offset: Vec<f64> = Vec::new();
        for item_in_class in 0..cfg.items_per_class {
            if item_in_class % cfg.tag_collision == 0 {
                group_offset = rng.gaussian_vec(dim);
                for x in group_offset.iter_mut() {
                    *x *= cfg.group_spread;
                }
            }
            let group_index = item_in_class / cfg.tag_collision;
            let mut item_offset = rng.gaussian_vec(dim);
            for x in item_offset.iter_mut() {
                *x *= cfg.instance_spread;
            }

            // Nucleus shared by the whole tag group.
            let mut nucleus = prototype.clone();
            add_scaled(&mut nucleus, &group_offset, 1.0);

            let mut audio_base = nucleus.clone();
            add_scaled(&mut audio_base, &item_offset, 1.0);
            let audio_features = canonical(noisy(
                &rotate(rotation.as_deref(), &audio_base),
                cfg.view_noise_audio,
                &mut rng,
            ));

            let caption = |share: f64, sigma: f64, rng: &mut Rng| {
                let mut base = nucleus.clone();
                add_scaled(&mut base, &item_offset, share);
                canonical(noisy(&base, sigma, rng))
            };
            let long_features = caption(GRANULARITY_SHARE[0], cfg.granularity_noise[0], &mut rng);
            let short_features = caption(GRANULARITY_SHARE[1], cfg.granularity_noise[1], &mut rng);
            let tag_features = caption(GRANULARITY_SHARE[2], cfg.granularity_noise[2], &mut rng);

            let split = split_for(item_in_class);
            let id = format!("clip{global_index:04}");
            let tags = alloc::vec![
                class_name.clone(),
                format!("grp{class_index:02}_{group_index:03}"),
            ];
            let class_labels = alloc::vec![class_name.clone()];

            items.push(Item {
                id: id.clone(),
                modality: Modality::Audio,
                split,
                features: audio_features,
                tags: crate::types::normalize_tag_set(&tags),
                class_labels: class_labels.clone(),
            });
            bundles.push(CaptionBundle {
                item_id: id.clone(),
                long_features,
                short_features,
                tag_features,
                tags: crate::types::normalize_tag_set(&tags),
                class_labels: class_labels.clone(),
            });
            ground_truth
                .audio_labels
                .insert(id.clone(), BTreeSet::from([class_name.clone()]));

            if split != Split::Train {
                let mut caption_ids = BTreeSet::new();
                for caption_index in 0..cfg.n_captions_eval {
                    let mut base = nucleus.clone();
                    add_scaled(&mut base, &item_offset, cfg.eval_caption_share);
                    let features = canonical(noisy(&base, cfg.view_noise_text, &mut rng));
                    let caption_id = format!("{id}_cap{caption_index}");
                    items.push(Item {
                        id: caption_id.clone(),
                        modality: Modality::Text,
                        split,
                        features,
                        tags: Vec::new(),
                        class_labels: class_labels.clone(),
                    });
                    caption_ids.insert(caption_id);
                }
                ground_truth.audio_to_texts.insert(id.clone(), caption_ids);
            }
            global_index += 1;
        }
    }

    // One embedded label prompt per class, for the mAP protocols.
    for (class_index, prototype) in prototypes.iter().enumerate() {
        let class_name = format!("class{class_index:02}");
        let features = canonical(noisy(prototype, cfg.granularity_noise[2], &mut rng));
        let label_id = format!("label_{class_name}");
        items.push(Item {
            id: label_id.clone(),
            modality: Modality::Text,
            split: Split::Test,
            features,
            tags: crate::types::normalize_tag_set(core::slice::from_ref(&class_name)),
            class_labels: alloc::vec![class_name.clone()],
        });
        ground_truth.label_items.insert(class_name, label_id);
    }

    Ok(SynthOutput {
        corpus: Corpus::new(dim, items, bundles)?,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Index;
    use crate::objective::build_positive_sets;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_classes: 3,
            items_per_class: 10,
            feature_dim: 8,
            ..SynthConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn noiseless_identity_world_has_perfect_pairs() {
        let cfg = SynthConfig {
            n_classes: 3,
            items_per_class: 20,
            feature_dim: 8,
            view_noise_audio: 0.0,
            view_noise_text: 0.0,
            granularity_noise: [0.0, 0.0, 0.0],
            audio_rotation: RotationKind::Identity,
            n_captions_eval: 1,
            ..SynthConfig::default()
        };
        let out = generate_corpus(&cfg).unwrap();
        let corpus = &out.corpus;
        for item in corpus.items_of(Modality::Audio, Split::Train) {
            let bundle = corpus.bundle(&item.id).unwrap();
            let cos = math::dot(
                &crate::embedding::l2_normalize(&item.features).unwrap(),
                &crate::embedding::l2_normalize(&bundle.long_features).unwrap(),
            );
            assert!(math::abs(cos - 1.0) < 1e-6, "cos {cos}");
        }
        // Training-free retrieval on raw features is perfect.
        let test_audio = corpus.items_of(Modality::Audio, Split::Test);
        let captions = corpus.items_of(Modality::Text, Split::Test);
        let caption_items: Vec<_> = captions
            .iter()
            .filter(|it| it.id.contains("_cap"))
            .collect();
        let index = Index::build(
            caption_items.iter().map(|it| it.id.clone()).collect(),
            caption_items.iter().map(|it| it.features.clone()).collect(),
        )
        .unwrap();
        for audio in &test_audio {
            let result = index.top_k(&audio.id, &audio.features, 1).unwrap();
            let expected = out.ground_truth.audio_to_texts[&audio.id].clone();
            assert!(expected.contains(&result.ranked[0].0));
        }
    }

    #[test]
    fn tag_collision_groups_share_tag_sets() {
        let cfg = SynthConfig {
            n_classes: 2,
            items_per_class: 8,
            feature_dim: 8,
            tag_collision: 2,
            ..SynthConfig::default()
        };
        let out = generate_corpus(&cfg).unwrap();
        let train = out.corpus.trainable_items(Split::Train);
        let bundles: Vec<_> = train
            .iter()
            .map(|it| out.corpus.bundle(&it.id).unwrap())
            .collect();
        let positives = build_positive_sets(&bundles).unwrap();
        // Groups of two: every grouped item has exactly one positive when
        // both members landed in the train split.
        let mut seen_pairs = 0;
        for i in 0..bundles.len() {
            if positives.positives(i).len() == 1 {
                seen_pairs += 1;
                let k = positives.positives(i)[0];
                assert_eq!(bundles[i].tags, bundles[k].tags);
            }
        }
        assert!(seen_pairs > 0);
    }

    #[test]
    fn splits_cover_train_val_test() {
        let out = generate_corpus(&SynthConfig {
            n_classes: 2,
            items_per_class: 20,
            feature_dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            assert!(
                !out.corpus.items_of(Modality::Audio, split).is_empty(),
                "{split:?} empty"
            );
        }
        // Ground truth covers exactly the held-out audio.
        for item in out.corpus.items_of(Modality::Audio, Split::Test) {
            assert!(out.ground_truth.audio_to_texts.contains_key(&item.id));
        }
        for item in out.corpus.items_of(Modality::Audio, Split::Train) {
            assert!(!out.ground_truth.audio_to_texts.contains_key(&item.id));
        }
    }

    #[test]
    fn features_are_f32_canonical() {
        let out = generate_corpus(&SynthConfig {
            n_classes: 2,
            items_per_class: 4,
            feature_dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        for item in out.corpus.items() {
            for &x in &item.features {
                assert_eq!(x, x as f32 as f64);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_classes = SynthConfig {
            n_classes: 1,
            ..SynthConfig::default()
        };
        assert!(generate_corpus(&bad_classes).is_err());
        let bad_order = SynthConfig {
            granularity_noise: [0.3, 0.2, 0.1],
            ..SynthConfig::default()
        };
        assert!(generate_corpus(&bad_order).is_err());
        let bad_captions = SynthConfig {
            n_captions_eval: 9,
            ..SynthConfig::default()
        };
        assert!(generate_corpus(&bad_captions).is_err());
    }

    #[test]
    fn label_items_exist_per_class() {
        let out = generate_corpus(&SynthConfig {
            n_classes: 3,
            items_per_class: 4,
            feature_dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(out.ground_truth.label_items.len(), 3);
        for id in out.ground_truth.label_items.values() {
            assert!(out.corpus.get(id).is_some());
        }
    }
}
