use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aurola::commands::{self, GradCheckArgs};
use aurola::experiment::ExperimentConfig;
use aurola::Result;
use aurola_core::objective::LossKind;
use aurola_core::rerank::{AlphaGrid, FusionConfig, RerankTrainConfig};
use aurola_core::types::{Granularity, Modality};

#[derive(Parser)]
#[command(
    name = "aurola",
    about = "Desk-scale cross-modal retrieval: synthesize, train, index, retrieve, mine, re-rank, evaluate.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Infonce,
    Hybrid,
}

impl From<LossArg> for LossKind {
    fn from(value: LossArg) -> Self {
        match value {
            LossArg::Infonce => LossKind::InfoNce,
            LossArg::Hybrid => LossKind::HybridNce,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Long,
    Short,
    Tag,
}

impl From<GranularityArg> for Granularity {
    fn from(value: GranularityArg) -> Self {
        match value {
            GranularityArg::Long => Granularity::Long,
            GranularityArg::Short => Granularity::Short,
            GranularityArg::Tag => Granularity::Tag,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    A2t,
    T2a,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: manifest, features, ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the retrieval projection heads.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        loss: Option<LossArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every split through trained heads (or L2-normalized raw
    /// features when no heads are given).
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        audio_head: Option<PathBuf>,
        #[arg(long)]
        text_head: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "long")]
        granularity: GranularityArg,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize embeddings into a searchable index artifact.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact top-k retrieval of queries against an index.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(short, long, default_value_t = 50)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine hard-negative pools in both directions.
    Mine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        audio_emb: PathBuf,
        #[arg(long)]
        captions_emb: PathBuf,
        #[arg(long, default_value_t = 32)]
        pool_size: usize,
        /// Keep true pairs and tag mates in the pools (off by default).
        #[arg(long)]
        keep_positives: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pairwise re-ranking scorer on mined pools.
    TrainRerank {
        #[arg(long)]
        pools_a2t: PathBuf,
        #[arg(long)]
        pools_t2a: PathBuf,
        #[arg(long)]
        audio_emb: PathBuf,
        #[arg(long)]
        text_emb: PathBuf,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rescore rankings with the pairwise scorer and fuse.
    Rerank {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long)]
        query_emb: PathBuf,
        #[arg(long)]
        cand_emb: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long, default_value_t = 50)]
        pool_size: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha_ret: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha_a2t: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha_t2a: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@K (and optional mAP) from ranking artifacts.
    Eval {
        #[arg(long)]
        rankings_a2t: PathBuf,
        #[arg(long)]
        rankings_t2a: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
        #[arg(long)]
        class_rankings_a2t: Option<PathBuf>,
        #[arg(long)]
        class_rankings_t2a: Option<PathBuf>,
        /// Per-query detail CSV (direction, query id, first relevant rank).
        #[arg(long)]
        per_query_csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search fusion weights on validation rankings.
    TuneAlphas {
        #[arg(long)]
        rankings_a2t: PathBuf,
        #[arg(long)]
        rankings_t2a: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        audio_emb: PathBuf,
        #[arg(long)]
        text_emb: PathBuf,
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        grid_ret: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.25,0.5,1.0")]
        grid_a2t: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.25,0.5,1.0")]
        grid_t2a: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        pool_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic loss gradients against central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value = "hybrid")]
        loss: LossArg,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Treat the negative weights as constants (stop-gradient); the
        /// check is then expected to fail.
        #[arg(long)]
        stop_grad: bool,
    },
    /// Maximum mean discrepancy between two embedding files.
    Mmd {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        bandwidth: Option<f64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg.with_seed(seed))
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let summary = match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = load_config(config.as_ref(), seed)?;
            commands::cmd_synth(&cfg, &out)?
        }
        Command::Train {
            config,
            manifest,
            features,
            loss,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            commands::cmd_train(&cfg, &manifest, &features, loss.map(Into::into), &out)?
        }
        Command::Embed {
            manifest,
            features,
            audio_head,
            text_head,
            granularity,
            gt,
            out,
        } => commands::cmd_embed(
            &manifest,
            &features,
            audio_head.as_deref(),
            text_head.as_deref(),
            granularity.into(),
            gt.as_deref(),
            &out,
        )?,
        Command::Index {
            embeddings,
            ids,
            out,
        } => commands::cmd_index(&embeddings, &ids, &out)?,
        Command::Retrieve {
            index,
            queries,
            k,
            out,
        } => commands::cmd_retrieve(&index, &queries, k, &out)?,
        Command::Mine {
            manifest,
            features,
            audio_emb,
            captions_emb,
            pool_size,
            keep_positives,
            out,
        } => commands::cmd_mine(
            &manifest,
            &features,
            &audio_emb,
            &captions_emb,
            pool_size,
            keep_positives,
            &out,
        )?,
        Command::TrainRerank {
            pools_a2t,
            pools_t2a,
            audio_emb,
            text_emb,
            epochs,
            batch_size,
            lr,
            seed,
            out,
        } => {
            let cfg = RerankTrainConfig {
                epochs,
                batch_size,
                lr,
                seed,
                ..RerankTrainConfig::default()
            };
            commands::cmd_train_rerank(&pools_a2t, &pools_t2a, &audio_emb, &text_emb, &cfg, &out)?
        }
        Command::Rerank {
            rankings,
            direction,
            query_emb,
            cand_emb,
            scorer,
            pool_size,
            alpha_ret,
            alpha_a2t,
            alpha_t2a,
            out,
        } => {
            let fusion = FusionConfig {
                alpha_ret,
                alpha_a2t,
                alpha_t2a,
                pool_size,
            };
            let modality = match direction {
                DirectionArg::A2t => Modality::Audio,
                DirectionArg::T2a => Modality::Text,
            };
            commands::cmd_rerank(
                &rankings, modality, &query_emb, &cand_emb, &scorer, &fusion, &out,
            )?
        }
        Command::Eval {
            rankings_a2t,
            rankings_t2a,
            gt,
            ks,
            class_rankings_a2t,
            class_rankings_t2a,
            per_query_csv,
            out,
        } => commands::cmd_eval(
            &rankings_a2t,
            &rankings_t2a,
            &gt,
            &ks,
            class_rankings_a2t.as_deref(),
            class_rankings_t2a.as_deref(),
            per_query_csv.as_deref(),
            out.as_deref(),
        )?,
        Command::TuneAlphas {
            rankings_a2t,
            rankings_t2a,
            gt,
            audio_emb,
            text_emb,
            scorer,
            grid_ret,
            grid_a2t,
            grid_t2a,
            pool_size,
            out,
        } => {
            let grid = AlphaGrid {
                ret: grid_ret,
                a2t: grid_a2t,
                t2a: grid_t2a,
            };
            commands::cmd_tune_alphas(
                &rankings_a2t,
                &rankings_t2a,
                &gt,
                &audio_emb,
                &text_emb,
                &scorer,
                &grid,
                pool_size,
                out.as_deref(),
            )?
        }
        Command::Gradcheck {
            loss,
            n,
            seed,
            batches,
            eps,
            stop_grad,
        } => {
            let args = GradCheckArgs {
                loss: loss.into(),
                n,
                seed,
                batches,
                eps,
                stop_grad,
                ..GradCheckArgs::default()
            };
            let summary = commands::cmd_gradcheck(&args)?;
            let pass = summary["pass"].as_bool().unwrap_or(false);
            println!("{summary}");
            return Ok(pass);
        }
        Command::Mmd { x, y, bandwidth } => commands::cmd_mmd(&x, &y, bandwidth)?,
    };
    println!("{summary}");
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}
