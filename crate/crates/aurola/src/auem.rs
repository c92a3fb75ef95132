//! AUEM: the on-disk embedding container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     4 bytes  "AUEM"
//! version   u32      1
//! row_count u64
//! dim       u32
//! dtype     u8       0 = 32-bit float
//! reserved  3 bytes  zero
//! data      row_count * dim * f32, row-major
//! ```
//!
//! Values are stored as f32; in-memory math is f64, so writers quantize.
//! Identical inputs always produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use aurola_core::embedding::EmbeddingMatrix;

use crate::{io_err, PipelineError, Result};

pub const MAGIC: [u8; 4] = *b"AUEM";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct AuemData {
    pub rows: usize,
    pub dim: usize,
    /// Row-major values, widened to f64.
    pub data: Vec<f64>,
}

pub fn write_auem(path: &Path, rows: usize, dim: usize, data: &[f64]) -> Result<()> {
    assert_eq!(data.len(), rows * dim, "row-major data length");
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(rows as u64).to_le_bytes());
    header.extend_from_slice(&(dim as u32).to_le_bytes());
    header.push(DTYPE_F32);
    header.extend_from_slice(&[0u8; 3]);
    writer.write_all(&header).map_err(io_err(path))?;
    for &value in data {
        writer
            .write_all(&(value as f32).to_le_bytes())
            .map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_auem(path: &Path) -> Result<AuemData> {
    let bad = |message: &str| PipelineError::Auem {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 24];
    reader.read_exact(&mut header).map_err(io_err(path))?;
    if header[0..4] != MAGIC {
        return Err(bad("bad magic, expected AUEM"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    if header[20] != DTYPE_F32 {
        return Err(bad(&format!("unsupported dtype {}", header[20])));
    }
    if header[21..24] != [0u8; 3] {
        return Err(bad("reserved bytes must be zero"));
    }
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(io_err(path))?;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("size overflow"))?;
    if raw.len() != expected {
        return Err(bad(&format!(
            "payload is {} bytes, expected {expected}",
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(AuemData { rows, dim, data })
}

/// Sidecar id list: one `{"id": "..."}` JSON object per line, row order.
pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    for id in ids {
        let record = serde_json::json!({ "id": id });
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

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let content = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids = Vec::new();
    for (number, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| PipelineError::Parse {
                path: path.to_path_buf(),
                line: number + 1,
                message: e.to_string(),
            })?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| PipelineError::MissingField {
                path: path.to_path_buf(),
                line: number + 1,
                field: "id",
            })?;
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// An embedding matrix persisted as `<prefix>.auem` + `<prefix>.ids.jsonl`.
pub fn write_embedding(prefix: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    write_auem(
        &prefix.with_extension("auem"),
        matrix.rows(),
        matrix.dim(),
        matrix.data(),
    )?;
    write_ids(&prefix.with_extension("ids.jsonl"), matrix.ids())
}

pub fn read_embedding(prefix: &Path) -> Result<EmbeddingMatrix> {
    let auem = read_auem(&prefix.with_extension("auem"))?;
    let ids = read_ids(&prefix.with_extension("ids.jsonl"))?;
    if ids.len() != auem.rows {
        return Err(PipelineError::Auem {
            path: prefix.to_path_buf(),
            message: format!("{} ids for {} rows", ids.len(), auem.rows),
        });
    }
    EmbeddingMatrix::from_flat(ids, auem.data, auem.dim).map_err(PipelineError::Core)
}
