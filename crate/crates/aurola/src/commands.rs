//! Implementations behind the CLI subcommands. Each returns the JSON
//! summary printed to stdout; file artifacts land under the given paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use aurola_core::embedding::EmbeddingMatrix;
use aurola_core::eval::{self, GroundTruth};
use aurola_core::head::ProjectionHead;
use aurola_core::index::{Index, RetrievalResult};
use aurola_core::mining::{mine_hard_negatives, MiningConfig};
use aurola_core::objective::{
    grad_check, hybrid_nce, info_nce, random_positive_sets, random_similarity_scaled, LossConfig,
    LossKind,
};
use aurola_core::pipeline;
use aurola_core::rerank::{
    rerank, train_reranker, tune_alphas, AlphaGrid, EmbeddingLookup, FusionConfig,
    RerankTrainConfig,
};
use aurola_core::rng::Rng;
use aurola_core::synth::generate_corpus;
use aurola_core::trainer::train_retriever;
use aurola_core::types::{Corpus, Granularity, Item, Modality, Split};

use crate::experiment::ExperimentConfig;
use crate::{artifacts, auem, io_err, manifest, parallel, PipelineError, Result};

pub fn cmd_synth(config: &ExperimentConfig, out_dir: &Path) -> Result<Value> {
    let output = generate_corpus(&config.synth)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    manifest::save_manifest(&output.corpus, out_dir)?;
    artifacts::write_ground_truth(&out_dir.join("gt.json"), &output.ground_truth)?;
    Ok(json!({
        "command": "synth",
        "items": output.corpus.items().len(),
        "feature_dim": output.corpus.feature_dim(),
        "seed": config.synth.seed,
        "manifest": out_dir.join("manifest.jsonl"),
        "features": out_dir.join("features.auem"),
        "ground_truth": out_dir.join("gt.json"),
    }))
}

pub fn cmd_train(
    config: &ExperimentConfig,
    manifest_path: &Path,
    features_path: &Path,
    loss_override: Option<LossKind>,
    out_dir: &Path,
) -> Result<Value> {
    let corpus = manifest::load_manifest(manifest_path, features_path)?;
    let mut train_cfg = config.train;
    if let Some(kind) = loss_override {
        train_cfg.loss.kind = kind;
        if kind == LossKind::InfoNce {
            train_cfg.loss.lambda = 0.0;
            train_cfg.loss.beta = 0.0;
        }
    }
    let started = std::time::Instant::now();
    let (audio_head, text_head, mut report) = train_retriever(&corpus, &train_cfg)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    artifacts::write_head(&out_dir.join("audio_head"), &audio_head)?;
    artifacts::write_head(&out_dir.join("text_head"), &text_head)?;
    // The report artifact stays byte-deterministic: wall time goes to
    // stdout only.
    report.wall_seconds = None;
    artifacts::write_json(&out_dir.join("train_report.json"), &report)?;
    report.wall_seconds = Some(wall_seconds);
    Ok(json!({
        "command": "train",
        "loss": train_cfg.loss.kind,
        "epoch_mean_losses": report.epoch_mean_losses,
        "val_recall_at_1_a2t": report.val_recall_at_1_a2t,
        "val_recall_at_1_t2a": report.val_recall_at_1_t2a,
        "wall_seconds": wall_seconds,
        "audio_head": out_dir.join("audio_head.auem"),
        "text_head": out_dir.join("text_head.auem"),
    }))
}

fn items_matrix(items: &[&Item], head: &ProjectionHead) -> Result<EmbeddingMatrix> {
    Ok(pipeline::embed_items(items, head)?)
}

/// Embeds every split through the heads; with no heads, raw features are
/// L2-normalized through an identity head (the input to the raw-space
/// pairwise scorer).
pub fn cmd_embed(
    manifest_path: &Path,
    features_path: &Path,
    audio_head: Option<&Path>,
    text_head: Option<&Path>,
    granularity: Granularity,
    gt_path: Option<&Path>,
    out_dir: &Path,
) -> Result<Value> {
    let corpus = manifest::load_manifest(manifest_path, features_path)?;
    let audio_head = match audio_head {
        Some(prefix) => artifacts::read_head(&strip_auem(prefix))?,
        None => ProjectionHead::identity(corpus.feature_dim()),
    };
    let text_head = match text_head {
        Some(prefix) => artifacts::read_head(&strip_auem(prefix))?,
        None => ProjectionHead::identity(corpus.feature_dim()),
    };
    let label_ids: std::collections::BTreeSet<String> = match gt_path {
        Some(path) => artifacts::read_ground_truth(path)?
            .label_items
            .into_values()
            .collect(),
        None => Default::default(),
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut written = Vec::new();
    let mut emit = |name: String, matrix: &EmbeddingMatrix| -> Result<()> {
        if matrix.rows() == 0 {
            return Ok(());
        }
        auem::write_embedding(&out_dir.join(&name), matrix)?;
        written.push(name);
        Ok(())
    };

    for split in [Split::Train, Split::Val, Split::Test] {
        let split_name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        let audio_items = corpus.items_of(Modality::Audio, split);
        if !audio_items.is_empty() {
            emit(
                format!("audio_{split_name}"),
                &items_matrix(&audio_items, &audio_head)?,
            )?;
            let bundled: Vec<&Item> = audio_items
                .iter()
                .copied()
                .filter(|it| corpus.bundle(&it.id).is_some())
                .collect();
            if !bundled.is_empty() {
                let captions =
                    pipeline::embed_captions(&corpus, &bundled, &text_head, granularity)?;
                emit(format!("captions_{split_name}"), &captions)?;
            }
        }
        let text_items: Vec<&Item> = corpus
            .items_of(Modality::Text, split)
            .into_iter()
            .filter(|it| !label_ids.contains(&it.id))
            .collect();
        if !text_items.is_empty() {
            emit(
                format!("text_{split_name}"),
                &items_matrix(&text_items, &text_head)?,
            )?;
        }
    }
    if !label_ids.is_empty() {
        let label_items: Vec<&Item> = corpus
            .items()
            .iter()
            .filter(|it| label_ids.contains(&it.id))
            .collect();
        emit("labels".to_string(), &items_matrix(&label_items, &text_head)?)?;
    }
    Ok(json!({
        "command": "embed",
        "granularity": granularity,
        "files": written,
        "out_dir": out_dir,
    }))
}

fn strip_auem(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "auem") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    }
}

pub fn cmd_index(embeddings: &Path, ids: &Path, out_prefix: &Path) -> Result<Value> {
    let data = auem::read_auem(embeddings)?;
    let id_list = auem::read_ids(ids)?;
    let matrix = EmbeddingMatrix::from_flat(id_list, data.data, data.dim)
        .map_err(PipelineError::Core)?;
    let index = Index::from_embeddings(matrix)?;
    if let Some(parent) = out_prefix.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    auem::write_embedding(out_prefix, index.embeddings())?;
    Ok(json!({
        "command": "index",
        "rows": index.len(),
        "dim": index.dim(),
        "out": out_prefix.with_extension("auem"),
    }))
}

pub fn cmd_retrieve(index_prefix: &Path, queries_prefix: &Path, k: usize, out: &Path) -> Result<Value> {
    let index = Index::from_embeddings(auem::read_embedding(&strip_auem(index_prefix))?)?;
    let queries = auem::read_embedding(&strip_auem(queries_prefix))?;
    let k = k.min(index.len()).max(1);
    let rankings = parallel::batch_top_k(&index, &queries, k)?;
    artifacts::write_rankings(out, &rankings)?;
    Ok(json!({
        "command": "retrieve",
        "queries": rankings.len(),
        "k": k,
        "threads": parallel::thread_count(),
        "out": out,
    }))
}

pub fn cmd_mine(
    manifest_path: &Path,
    features_path: &Path,
    audio_emb: &Path,
    captions_emb: &Path,
    pool_size: usize,
    keep_positives: bool,
    out_dir: &Path,
) -> Result<Value> {
    let corpus = manifest::load_manifest(manifest_path, features_path)?;
    let audio = auem::read_embedding(&strip_auem(audio_emb))?;
    let captions = auem::read_embedding(&strip_auem(captions_emb))?;
    let positives = pipeline::mining_positives(&corpus, Split::Train);
    let cfg = MiningConfig {
        pool_size,
        filter_positives: !keep_positives,
    };
    let text_index = Index::from_embeddings(captions.clone())?;
    let pools_a2t = mine_hard_negatives(&audio, &text_index, &positives, &cfg)?;
    let audio_index = Index::from_embeddings(audio.clone())?;
    let pools_t2a = mine_hard_negatives(&captions, &audio_index, &positives, &cfg)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    artifacts::write_pools(&out_dir.join("pools_a2t.jsonl"), &pools_a2t)?;
    artifacts::write_pools(&out_dir.join("pools_t2a.jsonl"), &pools_t2a)?;
    let empty = pools_a2t.empty_anchor_ids().len() + pools_t2a.empty_anchor_ids().len();
    if empty > 0 {
        eprintln!("warning: {empty} anchors mined an empty pool (corpus too small after filtering positives)");
    }
    Ok(json!({
        "command": "mine",
        "anchors_a2t": pools_a2t.entries.len(),
        "anchors_t2a": pools_t2a.entries.len(),
        "pool_size": pool_size,
        "empty_pools": empty,
        "out_dir": out_dir,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train_rerank(
    pools_a2t: &Path,
    pools_t2a: &Path,
    audio_emb: &Path,
    text_emb: &Path,
    cfg: &RerankTrainConfig,
    out_prefix: &Path,
) -> Result<Value> {
    let pa = artifacts::read_pools(pools_a2t)?;
    let pt = artifacts::read_pools(pools_t2a)?;
    let audio = auem::read_embedding(&strip_auem(audio_emb))?;
    let text = auem::read_embedding(&strip_auem(text_emb))?;
    let started = std::time::Instant::now();
    let scorer = train_reranker(&audio, &text, &pa, &pt, cfg)?;
    if let Some(parent) = out_prefix.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    artifacts::write_scorer(out_prefix, &scorer)?;
    Ok(json!({
        "command": "train-rerank",
        "dim": scorer.dim,
        "epochs": cfg.epochs,
        "wall_seconds": started.elapsed().as_secs_f64(),
        "out": out_prefix.with_extension("auem"),
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_rerank(
    rankings_path: &Path,
    direction: Modality,
    query_emb: &Path,
    cand_emb: &Path,
    scorer_prefix: &Path,
    fusion: &FusionConfig,
    out: &Path,
) -> Result<Value> {
    fusion.validate().map_err(PipelineError::Core)?;
    let rankings = artifacts::read_rankings(rankings_path)?;
    let queries = auem::read_embedding(&strip_auem(query_emb))?;
    let candidates = auem::read_embedding(&strip_auem(cand_emb))?;
    let scorer = artifacts::read_scorer(&strip_auem(scorer_prefix))?;
    let query_lookup = EmbeddingLookup::new(&queries);
    let candidate_lookup = EmbeddingLookup::new(&candidates);
    let mut out_rankings = Vec::with_capacity(rankings.len());
    for ranking in &rankings {
        let plan = rerank(
            &ranking.query_id,
            query_lookup.row(&ranking.query_id)?,
            direction,
            ranking,
            &candidate_lookup,
            &scorer,
            fusion,
        )?;
        out_rankings.push(RetrievalResult {
            query_id: plan.query_id,
            ranked: plan.final_ranking,
            k: ranking.k,
        });
    }
    artifacts::write_rankings(out, &out_rankings)?;
    Ok(json!({
        "command": "rerank",
        "queries": out_rankings.len(),
        "pool_size": fusion.pool_size,
        "alpha_ret": fusion.alpha_ret,
        "alpha_a2t": fusion.alpha_a2t,
        "alpha_t2a": fusion.alpha_t2a,
        "out": out,
    }))
}

/// Turns label-item rankings into class rankings using the ground truth's
/// label-item table.
fn class_rankings_from_labels(
    rankings: Vec<RetrievalResult>,
    gt: &GroundTruth,
    queries_are_labels: bool,
) -> Result<Vec<RetrievalResult>> {
    let class_of: BTreeMap<&String, &String> =
        gt.label_items.iter().map(|(class, id)| (id, class)).collect();
    let translate = |id: &String| -> Result<String> {
        class_of
            .get(id)
            .map(|c| (*c).clone())
            .ok_or_else(|| PipelineError::Config(format!("id `{id}` is not a label item")))
    };
    rankings
        .into_iter()
        .map(|mut r| {
            if queries_are_labels {
                r.query_id = translate(&r.query_id)?;
            } else {
                for entry in r.ranked.iter_mut() {
                    entry.0 = translate(&entry.0)?;
                }
            }
            Ok(r)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    rankings_a2t: &Path,
    rankings_t2a: &Path,
    gt_path: &Path,
    ks: &[usize],
    class_rankings_a2t: Option<&Path>,
    class_rankings_t2a: Option<&Path>,
    per_query_csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<Value> {
    let gt = artifacts::read_ground_truth(gt_path)?;
    let a2t = artifacts::read_rankings(rankings_a2t)?;
    let t2a = artifacts::read_rankings(rankings_t2a)?;
    let mut report = pipeline::recall_report(&a2t, &t2a, &gt, ks)?;
    if let Some(path) = class_rankings_a2t {
        let rankings = class_rankings_from_labels(artifacts::read_rankings(path)?, &gt, false)?;
        report.map_a2t = Some(eval::map_a2t(&rankings, &gt.audio_labels)?);
    }
    if let Some(path) = class_rankings_t2a {
        let rankings = class_rankings_from_labels(artifacts::read_rankings(path)?, &gt, true)?;
        report.map_t2a = Some(eval::map_t2a(&rankings, &gt.audio_labels)?);
    }
    if let Some(path) = per_query_csv {
        write_per_query_csv(path, &a2t, &t2a, &gt)?;
    }
    if let Some(path) = out {
        artifacts::write_json(path, &report)?;
    }
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

/// One row per query: the 1-based rank of its first relevant candidate,
/// empty when the candidate never appears in the ranking.
fn write_per_query_csv(
    path: &Path,
    a2t: &[RetrievalResult],
    t2a: &[RetrievalResult],
    gt: &GroundTruth,
) -> Result<()> {
    let mut text = String::from("direction,query_id,first_relevant_rank\n");
    for ranking in a2t {
        let texts = &gt.audio_to_texts[&ranking.query_id];
        let best = texts.iter().filter_map(|t| ranking.rank_of(t)).min();
        text.push_str(&format!(
            "a2t,{},{}\n",
            ranking.query_id,
            best.map(|r| r.to_string()).unwrap_or_default()
        ));
    }
    let text_to_audio = gt.text_to_audio();
    for ranking in t2a {
        let rank = ranking.rank_of(&text_to_audio[&ranking.query_id]);
        text.push_str(&format!(
            "t2a,{},{}\n",
            ranking.query_id,
            rank.map(|r| r.to_string()).unwrap_or_default()
        ));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_tune_alphas(
    rankings_a2t: &Path,
    rankings_t2a: &Path,
    gt_path: &Path,
    audio_emb: &Path,
    text_emb: &Path,
    scorer_prefix: &Path,
    grid: &AlphaGrid,
    pool_size: usize,
    out: Option<&Path>,
) -> Result<Value> {
    let gt = artifacts::read_ground_truth(gt_path)?;
    let a2t = artifacts::read_rankings(rankings_a2t)?;
    let t2a = artifacts::read_rankings(rankings_t2a)?;
    let audio = auem::read_embedding(&strip_auem(audio_emb))?;
    let text = auem::read_embedding(&strip_auem(text_emb))?;
    let scorer = artifacts::read_scorer(&strip_auem(scorer_prefix))?;
    let fusion = tune_alphas(&a2t, &t2a, &audio, &text, &scorer, &gt, grid, pool_size)?;
    if let Some(path) = out {
        artifacts::write_json(path, &fusion)?;
    }
    Ok(serde_json::to_value(fusion).expect("fusion serializes"))
}

pub struct GradCheckArgs {
    pub loss: LossKind,
    pub n: usize,
    pub seed: u64,
    pub batches: usize,
    pub eps: f64,
    pub scale: f64,
    pub stop_grad: bool,
}

impl Default for GradCheckArgs {
    fn default() -> Self {
        GradCheckArgs {
            loss: LossKind::HybridNce,
            n: 8,
            seed: 7,
            batches: 1,
            eps: 1e-5,
            scale: 0.15,
            stop_grad: false,
        }
    }
}

/// Exit contract: the caller turns `pass == false` into a nonzero exit.
pub fn cmd_gradcheck(args: &GradCheckArgs) -> Result<Value> {
    let mut rng = Rng::seed_from_u64(args.seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..args.batches.max(1) {
        let s = random_similarity_scaled(args.n, args.scale, &mut rng);
        let error = match args.loss {
            LossKind::InfoNce => grad_check(|m| info_nce(m, 0.05), &s, args.eps)?,
            LossKind::HybridNce => {
                let positives = random_positive_sets(args.n, 0.25, &mut rng);
                let cfg = LossConfig {
                    grad_through_weights: !args.stop_grad,
                    ..LossConfig::default()
                };
                grad_check(|m| hybrid_nce(m, &positives, &cfg), &s, args.eps)?
            }
        };
        max_rel = max_rel.max(error);
    }
    let threshold = 1e-5;
    Ok(json!({
        "command": "gradcheck",
        "loss": args.loss,
        "n": args.n,
        "batches": args.batches.max(1),
        "eps": args.eps,
        "grad_through_weights": !args.stop_grad,
        "max_rel_error": max_rel,
        "threshold": threshold,
        "pass": max_rel < threshold,
    }))
}

pub fn cmd_mmd(x: &Path, y: &Path, bandwidth: Option<f64>) -> Result<Value> {
    let x_emb = auem::read_embedding(&strip_auem(x))?;
    let y_emb = auem::read_embedding(&strip_auem(y))?;
    let value = eval::mmd_rbf(&x_emb, &y_emb, bandwidth)?;
    Ok(json!({
        "command": "mmd",
        "x_rows": x_emb.rows(),
        "y_rows": y_emb.rows(),
        "bandwidth": bandwidth,
        "mmd": value,
    }))
}

/// Shared by tests: load a corpus back.
pub fn load_corpus(manifest_path: &Path, features_path: &Path) -> Result<Corpus> {
    manifest::load_manifest(manifest_path, features_path)
}
