//! Core algorithms for desk-scale cross-modal retrieval.
//!
//! Everything in this crate is pure computation over in-memory vectors:
//! contrastive objectives with exact analytic gradients, projection-head
//! training, exact top-k search, hard-negative mining, pairwise re-ranking
//! with bidirectional score fusion, and the evaluation protocols
//! (Recall@K, mAP, MMD). File formats, the CLI, and thread fan-out live in
//! the companion `aurola` crate.
//!
//! The crate is `no_std` (with `alloc`) and deterministic: identical inputs
//! and seeds produce bit-identical outputs.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod embedding;
pub mod error;
pub mod eval;
pub mod head;
pub mod index;
pub mod math;
pub mod mining;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod rerank;
pub mod rng;
pub mod similarity;
pub mod synth;
pub mod trainer;
pub mod types;

pub use embedding::{l2_normalize, l2_normalize_in_place, EmbeddingMatrix};
pub use error::{CoreError, Result};
pub use rng::Rng;
pub use similarity::{similarity_matrix, SimilarityKind, SimilarityMatrix};
pub use types::{CaptionBundle, Corpus, Item, Modality, Split};
