//! Thread fan-out for read-only batch queries.
//!
//! `AUROLA_THREADS` caps the worker count (0 or unset = all cores). Results
//! are reassembled in query order, so parallel output is identical to the
//! serial path.

use aurola_core::embedding::EmbeddingMatrix;
use aurola_core::index::{Index, RetrievalResult};

use crate::{PipelineError, Result};

pub const THREADS_ENV: &str = "AUROLA_THREADS";

pub fn thread_count() -> usize {
    let configured = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    if configured > 0 {
        return configured;
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Same contract as [`Index::batch_top_k`], fanned out over contiguous
/// query chunks.
pub fn batch_top_k(
    index: &Index,
    queries: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    let workers = thread_count().max(1);
    let total = queries.rows();
    if workers == 1 || total <= 1 {
        return Ok(index.batch_top_k(queries, k)?);
    }
    let chunk_size = total.div_ceil(workers);
    let mut results: Vec<Option<Vec<RetrievalResult>>> = Vec::new();
    results.resize_with(total.div_ceil(chunk_size), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_index, start) in (0..total).step_by(chunk_size).enumerate() {
            let end = (start + chunk_size).min(total);
            handles.push((
                chunk_index,
                scope.spawn(move || -> Result<Vec<RetrievalResult>> {
                    let mut out = Vec::with_capacity(end - start);
                    for q in start..end {
                        out.push(index.top_k(&queries.ids()[q], queries.row(q), k)?);
                    }
                    Ok(out)
                }),
            ));
        }
        for (chunk_index, handle) in handles {
            let chunk = handle.join().map_err(|_| {
                PipelineError::Config("retrieval worker thread panicked".to_string())
            })??;
            results[chunk_index] = Some(chunk);
        }
        Ok::<(), PipelineError>(())
    })?;
    Ok(results.into_iter().flatten().flatten().collect())
}
