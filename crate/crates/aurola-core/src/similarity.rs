//! Pairwise similarity between two embedding sets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// Dot product of L2-normalized vectors. The default: cosine keeps
    /// scores in [-1, 1], which the loss temperature is scaled for.
    #[default]
    Cosine,
    Dot,
}

/// Dense score matrix between `row_ids` (queries) and `col_ids` (candidates).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    values: Vec<f64>,
    cols: usize,
}

impl SimilarityMatrix {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let cols = col_ids.len();
        if values.len() != row_ids.len() * cols {
            return Err(CoreError::LengthMismatch {
                left: values.len(),
                right: row_ids.len() * cols,
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("similarity matrix"));
        }
        Ok(SimilarityMatrix {
            row_ids,
            col_ids,
            values,
            cols,
        })
    }

    /// Square matrix from raw values, ids synthesized from indices. Test and
    /// gradient-check convenience.
    pub fn square_from_values(values: Vec<f64>, n: usize) -> Result<Self> {
        let ids: Vec<String> = (0..n).map(|i| alloc::format!("{i}")).collect();
        Self::new(ids.clone(), ids, values)
    }

    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transposed(&self) -> SimilarityMatrix {
        let rows = self.rows();
        let mut values = vec![0.0; self.values.len()];
        for i in 0..rows {
            for j in 0..self.cols {
                values[j * rows + i] = self.get(i, j);
            }
        }
        SimilarityMatrix {
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
            values,
            cols: rows,
        }
    }
}

/// `values[i][j] = sim(a_i, t_j)`. Cosine normalizes internally when the
/// inputs are not already flagged normalized.
pub fn similarity_matrix(
    a: &EmbeddingMatrix,
    t: &EmbeddingMatrix,
    kind: SimilarityKind,
) -> Result<SimilarityMatrix> {
    if a.dim() != t.dim() && a.rows() > 0 && t.rows() > 0 {
        return Err(CoreError::DimMismatch {
            left: a.dim(),
            right: t.dim(),
        });
    }
    let (a_owned, t_owned);
    let (a, t) = match kind {
        SimilarityKind::Cosine => {
            a_owned = if a.is_normalized() {
                None
            } else {
                Some(a.clone().into_normalized()?)
            };
            t_owned = if t.is_normalized() {
                None
            } else {
                Some(t.clone().into_normalized()?)
            };
            (a_owned.as_ref().unwrap_or(a), t_owned.as_ref().unwrap_or(t))
        }
        SimilarityKind::Dot => (a, t),
    };
    let mut values = Vec::with_capacity(a.rows() * t.rows());
    for i in 0..a.rows() {
        let qa = a.row(i);
        for j in 0..t.rows() {
            values.push(math::dot(qa, t.row(j)));
        }
    }
    SimilarityMatrix::new(a.ids().to_vec(), t.ids().to_vec(), values)
}
