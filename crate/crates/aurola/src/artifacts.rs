//! Per-stage pipeline artifacts: rankings, hard-negative pools, ground
//! truth, projection heads, and the pairwise scorer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use aurola_core::eval::GroundTruth;
use aurola_core::head::ProjectionHead;
use aurola_core::index::RetrievalResult;
use aurola_core::mining::{HardNegativePool, PoolEntry};
use aurola_core::rerank::BilinearScorer;

use crate::auem::{read_auem, write_auem};
use crate::{io_err, PipelineError, Result};

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, &record).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n").map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (number, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line: number + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&content).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingRecord {
    query_id: String,
    k: usize,
    ranked: Vec<(String, f64)>,
}

pub fn write_rankings(path: &Path, rankings: &[RetrievalResult]) -> Result<()> {
    write_jsonl(
        path,
        rankings.iter().map(|r| RankingRecord {
            query_id: r.query_id.clone(),
            k: r.k,
            ranked: r.ranked.clone(),
        }),
    )
}

pub fn read_rankings(path: &Path) -> Result<Vec<RetrievalResult>> {
    Ok(read_jsonl::<RankingRecord>(path)?
        .into_iter()
        .map(|r| RetrievalResult {
            query_id: r.query_id,
            ranked: r.ranked,
            k: r.k,
        })
        .collect())
}

pub fn write_pools(path: &Path, pool: &HardNegativePool) -> Result<()> {
    write_jsonl(path, pool.entries.iter())
}

pub fn read_pools(path: &Path) -> Result<HardNegativePool> {
    Ok(HardNegativePool {
        entries: read_jsonl::<PoolEntry>(path)?,
    })
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    write_json(path, gt)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    read_json(path)
}

/// Head parameters as one AUEM: `out_dim` rows of `in_dim + 1` values,
/// each row `[weight_row | bias]`.
pub fn write_head(prefix: &Path, head: &ProjectionHead) -> Result<()> {
    let mut rows = Vec::with_capacity(head.out_dim * (head.in_dim + 1));
    for o in 0..head.out_dim {
        rows.extend_from_slice(&head.weight[o * head.in_dim..(o + 1) * head.in_dim]);
        rows.push(head.bias[o]);
    }
    write_auem(
        &prefix.with_extension("auem"),
        head.out_dim,
        head.in_dim + 1,
        &rows,
    )
}

pub fn read_head(prefix: &Path) -> Result<ProjectionHead> {
    let auem = read_auem(&prefix.with_extension("auem"))?;
    if auem.dim < 2 {
        return Err(PipelineError::Auem {
            path: prefix.to_path_buf(),
            message: "head file needs at least one weight column plus bias".to_string(),
        });
    }
    let out_dim = auem.rows;
    let in_dim = auem.dim - 1;
    let mut weight = Vec::with_capacity(out_dim * in_dim);
    let mut bias = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &auem.data[o * auem.dim..(o + 1) * auem.dim];
        weight.extend_from_slice(&row[..in_dim]);
        bias.push(row[in_dim]);
    }
    ProjectionHead::from_parts(weight, bias, in_dim, out_dim).map_err(PipelineError::Core)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScorerMeta {
    dim: usize,
    bias_yes: f64,
    bias_no: f64,
}

/// Scorer weights as AUEM (`dim x dim`) plus a JSON sidecar for the biases.
pub fn write_scorer(prefix: &Path, scorer: &BilinearScorer) -> Result<()> {
    write_auem(
        &prefix.with_extension("auem"),
        scorer.dim,
        scorer.dim,
        &scorer.weight,
    )?;
    write_json(
        &prefix.with_extension("meta.json"),
        &ScorerMeta {
            dim: scorer.dim,
            bias_yes: scorer.bias_yes,
            bias_no: scorer.bias_no,
        },
    )
}

pub fn read_scorer(prefix: &Path) -> Result<BilinearScorer> {
    let auem = read_auem(&prefix.with_extension("auem"))?;
    let meta: ScorerMeta = read_json(&prefix.with_extension("meta.json"))?;
    if auem.rows != meta.dim || auem.dim != meta.dim {
        return Err(PipelineError::Auem {
            path: prefix.to_path_buf(),
            message: format!(
                "scorer weight is {}x{}, meta says {}",
                auem.rows, auem.dim, meta.dim
            ),
        });
    }
    BilinearScorer::from_parts(auem.data, meta.bias_yes, meta.bias_no, meta.dim)
            .map_err(PipelineError::Core)
}
