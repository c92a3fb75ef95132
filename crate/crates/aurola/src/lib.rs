//! File formats, experiment configs, and thread fan-out around
//! [`aurola_core`]: the AUEM embedding container, the JSONL manifest,
//! ranking/pool/report artifacts, and the pipeline CLI plumbing.

pub mod artifacts;
pub mod auem;
pub mod commands;
pub mod experiment;
pub mod manifest;
pub mod parallel;

use std::path::PathBuf;

pub use aurola_core::error::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}: {message}")]
    Auem { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
