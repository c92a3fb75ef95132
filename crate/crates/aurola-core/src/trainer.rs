//! Contrastive training of the audio/text projection heads over precomputed
//! features, with per-item caption granularity sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::head::{numbered_ids, HeadGradients, ProjectionHead};
use crate::index::compare_ranked;
use crate::math;
use crate::objective::{batch_loss, build_positive_sets, LossConfig, LossOutput, PositiveSets};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::similarity::SimilarityMatrix;
use crate::types::{CaptionBundle, Corpus, Granularity, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSampling {
    /// Uniform draw over long/short/tag per item per batch.
    #[default]
    UniformLongShortTag,
    FixedGranularity(Granularity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub caption_sampling: CaptionSampling,
    pub optimizer: OptimizerKind,
    /// Output dimension of both projection heads.
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
            loss: LossConfig::default(),
            caption_sampling: CaptionSampling::default(),
            optimizer: OptimizerKind::Adam,
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::InvalidConfig(String::from("epochs must be >= 1")));
        }
        if self.batch_size < 2 {
            return Err(CoreError::InvalidConfig(String::from("batch_size must be >= 2")));
        }
        if self.batch_size > train_size {
            return Err(CoreError::InvalidConfig(format!(
                "batch_size {} exceeds train split size {train_size}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.embed_dim == 0 {
            return Err(CoreError::InvalidConfig(String::from("embed_dim must be >= 1")));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_mean_losses: Vec<f64>,
    /// Validation Recall@1 over paired long captions; `None` without a val split.
    pub val_recall_at_1_a2t: Option<f64>,
    pub val_recall_at_1_t2a: Option<f64>,
    pub seed: u64,
    /// Filled by the caller; pure computation has no clock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

/// Uniform draw over the three caption granularities of a bundle.
pub fn sample_caption<'a>(bundle: &'a CaptionBundle, rng: &mut Rng) -> (&'a [f64], Granularity) {
    let granularity = Granularity::ALL[rng.next_index(3)];
    (bundle.features(granularity), granularity)
}

fn pick_caption<'a>(
    bundle: &'a CaptionBundle,
    sampling: CaptionSampling,
    rng: &mut Rng,
) -> (&'a [f64], Granularity) {
    match sampling {
        CaptionSampling::UniformLongShortTag => sample_caption(bundle, rng),
        CaptionSampling::FixedGranularity(g) => (bundle.features(g), g),
    }
}

/// Loss and parameter gradients for one batch: forward both heads, cosine
/// similarity matrix, configured loss, exact backprop through the
/// normalization and affine maps.
pub struct BatchPass {
    pub loss: LossOutput,
    pub audio_grads: HeadGradients,
    pub text_grads: HeadGradients,
}

pub fn batch_pass(
    audio_head: &ProjectionHead,
    text_head: &ProjectionHead,
    audio_features: &[Vec<f64>],
    text_features: &[Vec<f64>],
    positives: &PositiveSets,
    loss_cfg: &LossConfig,
) -> Result<BatchPass> {
    let n = audio_features.len();
    if n != text_features.len() {
        return Err(CoreError::LengthMismatch {
            left: n,
            right: text_features.len(),
        });
    }
    if n == 0 {
        return Err(CoreError::EmptyBatch);
    }
    let audio_trace = audio_head.forward_traced(audio_features)?;
    let text_trace = text_head.forward_traced(text_features)?;
    let k = audio_head.out_dim;
    if k != text_head.out_dim {
        return Err(CoreError::DimMismatch {
            left: k,
            right: text_head.out_dim,
        });
    }
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        let a = &audio_trace.output[i * k..(i + 1) * k];
        for j in 0..n {
            let t = &text_trace.output[j * k..(j + 1) * k];
            values.push(math::dot(a, t));
        }
    }
    let ids = numbered_ids("b", n);
    let s = SimilarityMatrix::new(ids.clone(), ids, values)?;
    let loss = batch_loss(&s, positives, loss_cfg)?;

    // dL/dA = G T, dL/dT = G^T A over the normalized outputs.
    let mut grad_audio_out = alloc::vec![0.0; n * k];
    let mut grad_text_out = alloc::vec![0.0; n * k];
    for i in 0..n {
        for j in 0..n {
            let g = loss.grad_s[i * n + j];
            if g == 0.0 {
                continue;
            }
            let t = &text_trace.output[j * k..(j + 1) * k];
            let a = &audio_trace.output[i * k..(i + 1) * k];
            for d in 0..k {
                grad_audio_out[i * k + d] += g * t[d];
                grad_text_out[j * k + d] += g * a[d];
            }
        }
    }
    let audio_grads = audio_head.backward(audio_features, &audio_trace, &grad_audio_out)?;
    let text_grads = text_head.backward(text_features, &text_trace, &grad_text_out)?;
    Ok(BatchPass {
        loss,
        audio_grads,
        text_grads,
    })
}

struct HeadState {
    head: ProjectionHead,
    weight_opt: Optimizer,
    bias_opt: Optimizer,
}

impl HeadState {
    fn new(head: ProjectionHead, kind: OptimizerKind) -> Self {
        let weight_opt = Optimizer::new(kind, head.weight.len());
        let bias_opt = Optimizer::new(kind, head.bias.len());
        HeadState {
            head,
            weight_opt,
            bias_opt,
        }
    }

    fn apply(&mut self, grads: &HeadGradients, lr: f64) {
        self.weight_opt.step(&mut self.head.weight, &grads.weight, lr);
        self.bias_opt.step(&mut self.head.bias, &grads.bias, lr);
    }
}

/// Recall@1 in both directions for paired rows (row i of `audio` is the
/// ground-truth match of row i of `text`), under the global tie rule.
pub fn paired_recall_at_1(audio: &EmbeddingMatrix, text: &EmbeddingMatrix) -> Result<(f64, f64)> {
    let n = audio.rows();
    if n == 0 || n != text.rows() {
        return Err(CoreError::EmptyValidation);
    }
    let mut hits_a2t = 0usize;
    let mut hits_t2a = 0usize;
    for i in 0..n {
        let best_text = (0..n)
            .map(|j| (text.ids()[j].clone(), math::dot(audio.row(i), text.row(j))))
            .min_by(compare_ranked)
            .unwrap();
        if best_text.0 == text.ids()[i] {
            hits_a2t += 1;
        }
        let best_audio = (0..n)
            .map(|j| (audio.ids()[j].clone(), math::dot(text.row(i), audio.row(j))))
            .min_by(compare_ranked)
            .unwrap();
        if best_audio.0 == audio.ids()[i] {
            hits_t2a += 1;
        }
    }
    Ok((hits_a2t as f64 / n as f64, hits_t2a as f64 / n as f64))
}

/// Trains both projection heads with in-batch contrastive learning.
/// Deterministic: identical `(corpus, cfg)` produce bit-identical heads.
pub fn train_retriever(
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<(ProjectionHead, ProjectionHead, TrainReport)> {
    let train_items = corpus.trainable_items(Split::Train);
    if train_items.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    cfg.validate(train_items.len())?;

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let in_dim = corpus.feature_dim();
    let mut audio = HeadState::new(
        ProjectionHead::random_init(in_dim, cfg.embed_dim, &mut rng),
        cfg.optimizer,
    );
    let mut text = HeadState::new(
        ProjectionHead::random_init(in_dim, cfg.embed_dim, &mut rng),
        cfg.optimizer,
    );

    let mut epoch_mean_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut audio_features = Vec::with_capacity(chunk.len());
            let mut text_features = Vec::with_capacity(chunk.len());
            let mut bundles = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let item = train_items[idx];
                let bundle = corpus
                    .bundle(&item.id)
                    .ok_or_else(|| CoreError::MissingGranularity(item.id.clone()))?;
                let (caption, _granularity) = pick_caption(bundle, cfg.caption_sampling, &mut rng);
                audio_features.push(item.features.clone());
                text_features.push(caption.to_vec());
                bundles.push(bundle);
            }
            let positives = build_positive_sets(&bundles)?;
            let pass = batch_pass(
                &audio.head,
                &text.head,
                &audio_features,
                &text_features,
                &positives,
                &cfg.loss,
            )?;
            audio.apply(&pass.audio_grads, cfg.lr);
            text.apply(&pass.text_grads, cfg.lr);
            loss_sum += pass.loss.value;
            batches += 1;
        }
        epoch_mean_losses.push(loss_sum / batches.max(1) as f64);
    }

    let (val_a2t, val_t2a) = validation_recall(corpus, &audio.head, &text.head)?;
    Ok((
        audio.head,
        text.head,
        TrainReport {
            epoch_mean_losses,
            val_recall_at_1_a2t: val_a2t,
            val_recall_at_1_t2a: val_t2a,
            seed: cfg.seed,
            wall_seconds: None,
        },
    ))
}

/// Paired-long-caption Recall@1 on the val split (the trainer's internal
/// sanity metric; the eval module owns the full protocol).
fn validation_recall(
    corpus: &Corpus,
    audio_head: &ProjectionHead,
    text_head: &ProjectionHead,
) -> Result<(Option<f64>, Option<f64>)> {
    let val_items = corpus.trainable_items(Split::Val);
    if val_items.is_empty() {
        return Ok((None, None));
    }
    let ids: Vec<String> = val_items.iter().map(|it| it.id.clone()).collect();
    let audio_features: Vec<Vec<f64>> = val_items.iter().map(|it| it.features.clone()).collect();
    let caption_features: Vec<Vec<f64>> = val_items
        .iter()
        .map(|it| corpus.bundle(&it.id).unwrap().long_features.clone())
        .collect();
    let audio_emb = audio_head.forward(ids.clone(), &audio_features)?;
    let text_emb = text_head.forward(ids, &caption_features)?;
    let (a2t, t2a) = paired_recall_at_1(&audio_emb, &text_emb)?;
    Ok((Some(a2t), Some(t2a)))
}
