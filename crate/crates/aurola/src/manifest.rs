//! The corpus manifest: one JSON object per item, features stored by row
//! index into a companion AUEM file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use aurola_core::types::{CaptionBundle, Corpus, Item, Modality, Split};

use crate::auem::{read_auem, write_auem};
use crate::{io_err, PipelineError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    modality: Modality,
    split: Split,
    features_row: usize,
    long_row: Option<usize>,
    short_row: Option<usize>,
    tag_row: Option<usize>,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    class_labels: Vec<String>,
}

/// Writes `manifest.jsonl` plus `features.auem` under `dir`. Feature rows
/// are assigned in item order: the item's own features, then (for bundled
/// audio items) the long, short, and tag caption rows.
pub fn save_manifest(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.jsonl");
    let features_path = dir.join("features.auem");
    let dim = corpus.feature_dim();

    let mut rows: Vec<f64> = Vec::new();
    let mut row_count = 0usize;
    let push_row = |features: &[f64], rows: &mut Vec<f64>, row_count: &mut usize| -> usize {
        rows.extend_from_slice(features);
        *row_count += 1;
        *row_count - 1
    };

    let file = File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut writer = BufWriter::new(file);
    for item in corpus.items() {
        let features_row = push_row(&item.features, &mut rows, &mut row_count);
        let bundle = corpus.bundle(&item.id);
        let (long_row, short_row, tag_row) = match bundle {
            Some(b) => (
                Some(push_row(&b.long_features, &mut rows, &mut row_count)),
                Some(push_row(&b.short_features, &mut rows, &mut row_count)),
                Some(push_row(&b.tag_features, &mut rows, &mut row_count)),
            ),
            None => (None, None, None),
        };
        let record = ManifestRecord {
            id: item.id.clone(),
            modality: item.modality,
            split: item.split,
            features_row,
            long_row,
            short_row,
            tag_row,
            tags: item.tags.clone(),
            class_labels: item.class_labels.clone(),
        };
        serde_json::to_writer(&mut writer, &record).map_err(|e| PipelineError::Parse {
            path: manifest_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n").map_err(io_err(&manifest_path))?;
    }
    writer.flush().map_err(io_err(&manifest_path))?;
    write_auem(&features_path, row_count, dim, &rows)
}

/// Loads a corpus from `manifest.jsonl` + its AUEM feature file. Validates
/// duplicate ids, row bounds, and that trainable records carry tags.
pub fn load_manifest(manifest_path: &Path, features_path: &Path) -> Result<Corpus> {
    let auem = read_auem(features_path)?;
    let content = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let mut items = Vec::new();
    let mut bundles = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    let fetch = |row: usize, line: usize| -> Result<Vec<f64>> {
        if row >= auem.rows {
            return Err(PipelineError::Parse {
                path: manifest_path.to_path_buf(),
                line,
                message: format!("features_row {row} out of range ({} rows)", auem.rows),
            });
        }
        Ok(auem.data[row * auem.dim..(row + 1) * auem.dim].to_vec())
    };

    for (number, line) in content.lines().enumerate() {
        let line_no = number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::Parse {
                path: manifest_path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if seen.insert(record.id.clone(), line_no).is_some() {
            return Err(PipelineError::Core(
                aurola_core::CoreError::DuplicateId(record.id),
            ));
        }
        let tags = aurola_core::types::normalize_tag_set(&record.tags);
        let bundle_rows = match (record.long_row, record.short_row, record.tag_row) {
            (Some(l), Some(s), Some(t)) => Some((l, s, t)),
            (None, None, None) => None,
            _ => {
                return Err(PipelineError::Parse {
                    path: manifest_path.to_path_buf(),
                    line: line_no,
                    message: "caption rows must be all present or all null".to_string(),
                })
            }
        };
        // Trainable records (train-split audio with captions) need tags.
        if record.modality == Modality::Audio
            && record.split == Split::Train
            && bundle_rows.is_some()
            && tags.is_empty()
        {
            return Err(PipelineError::MissingField {
                path: manifest_path.to_path_buf(),
                line: line_no,
                field: "tags",
            });
        }
        if let Some((l, s, t)) = bundle_rows {
            bundles.push(CaptionBundle {
                item_id: record.id.clone(),
                long_features: fetch(l, line_no)?,
                short_features: fetch(s, line_no)?,
                tag_features: fetch(t, line_no)?,
                tags: tags.clone(),
                class_labels: record.class_labels.clone(),
            });
        }
        items.push(Item {
            id: record.id,
            modality: record.modality,
            split: record.split,
            features: fetch(record.features_row, line_no)?,
            tags,
            class_labels: record.class_labels,
        });
    }
    Ok(Corpus::new(auem.dim, items, bundles)?)
}
