//! Dense embedding store with exact top-k retrieval.
//!
//! Search is exact heap-select over cosine scores. Ties break by ascending
//! candidate id everywhere in the pipeline, so rankings are total orders.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::embedding::{l2_normalize, EmbeddingMatrix};
use crate::error::{CoreError, Result};
use crate::math;

/// Immutable search index over L2-normalized embeddings.
#[derive(Debug, Clone)]
pub struct Index {
    embeddings: EmbeddingMatrix,
}

/// Ranked candidates for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    /// `(candidate_id, score)` descending by score, ties by ascending id.
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

impl RetrievalResult {
    /// 1-based rank of a candidate, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranked.iter().position(|(c, _)| c == id).map(|p| p + 1)
    }
}

/// `(score desc, id asc)`: returns Less when `a` outranks `b`.
pub fn compare_ranked(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

struct HeapEntry {
    score: f64,
    index: usize,
    id: String,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // The heap's max is the entry to evict: lowest score, then largest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl Index {
    /// Builds an index, normalizing rows if they are not already unit norm.
    pub fn build(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let embeddings = EmbeddingMatrix::from_rows(ids, rows)?.into_normalized()?;
        Ok(Index { embeddings })
    }

    pub fn from_embeddings(embeddings: EmbeddingMatrix) -> Result<Self> {
        Ok(Index {
            embeddings: embeddings.into_normalized()?,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    /// Exact top-k by cosine score; `k` clamps to the index size. Matches a
    /// full sort under the `(score desc, id asc)` tie rule.
    pub fn top_k(&self, query_id: &str, query: &[f64], k: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(CoreError::InvalidConfig(String::from("k must be >= 1")));
        }
        if self.is_empty() {
            return Ok(RetrievalResult {
                query_id: String::from(query_id),
                ranked: Vec::new(),
                k,
            });
        }
        if query.len() != self.dim() {
            return Err(CoreError::DimMismatch {
                left: query.len(),
                right: self.dim(),
            });
        }
        let unit_query = l2_normalize(query)?;
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            let score = math::dot(&unit_query, self.embeddings.row(i));
            heap.push(HeapEntry {
                score,
                index: i,
                id: self.embeddings.ids()[i].clone(),
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut ranked: Vec<(String, f64)> = heap
            .into_iter()
            .map(|e| (self.embeddings.ids()[e.index].clone(), e.score))
            .collect();
        ranked.sort_by(compare_ranked);
        Ok(RetrievalResult {
            query_id: String::from(query_id),
            ranked,
            k,
        })
    }

    /// Per-query [`Index::top_k`], output order matching query order.
    pub fn batch_top_k(&self, queries: &EmbeddingMatrix, k: usize) -> Result<Vec<RetrievalResult>> {
        let mut out = Vec::with_capacity(queries.rows());
        for i in 0..queries.rows() {
            out.push(self.top_k(&queries.ids()[i], queries.row(i), k)?);
        }
        Ok(out)
    }
}
