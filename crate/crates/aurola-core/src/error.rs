//! Error type shared by all core operations.

use alloc::string::String;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("cannot normalize a zero-norm vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("similarity matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("negative set is empty")]
    EmptyNegativeSet,
    #[error("item `{0}` has no caption features at the requested granularity")]
    MissingGranularity(String),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("hard-negative pool is empty")]
    EmptyPool,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("class `{0}` has no positive items")]
    EmptyClass(String),
    #[error("embedding set is empty")]
    EmptySet,
    #[error("ranked list contains no relevant item")]
    NoRelevant,
    #[error("no ground truth recorded for query `{0}`")]
    MissingGroundTruth(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}
