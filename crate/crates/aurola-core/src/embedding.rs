//! Row-major embedding matrices keyed by item id.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;

/// Tolerance for the `normalized` flag: rows must have unit norm within this.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Returns `v / ||v||`. Errors on (near-)zero vectors.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l2_normalize_in_place(v: &mut [f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("vector"));
    }
    let norm = math::l2_norm(v);
    if norm < 1e-12 {
        return Err(CoreError::ZeroVector);
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// Ordered ids plus a dense row-major matrix of their vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(CoreError::LengthMismatch {
                left: ids.len(),
                right: rows.len(),
            });
        }
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(CoreError::DimMismatch {
                    left: row.len(),
                    right: dim,
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(ids, data, dim)
    }

    pub fn from_flat(ids: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return Err(CoreError::DimMismatch {
                left: data.len(),
                right: 0,
            });
        }
        if dim != 0 && data.len() != ids.len() * dim {
            return Err(CoreError::LengthMismatch {
                left: data.len(),
                right: ids.len() * dim,
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("embedding matrix"));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(CoreError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            ids,
            data,
            dim,
            normalized: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// L2-normalize every row and set the `normalized` flag. Idempotent.
    pub fn into_normalized(mut self) -> Result<Self> {
        if !self.normalized {
            for i in 0..self.ids.len() {
                let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
                l2_normalize_in_place(row)?;
            }
            self.normalized = true;
        }
        Ok(self)
    }

    /// Marks the matrix normalized after verifying each row's norm is within
    /// [`NORM_TOLERANCE`] of 1.
    pub fn assert_normalized(mut self) -> Result<Self> {
        for i in 0..self.ids.len() {
            let norm = math::l2_norm(self.row(i));
            if math::abs(norm - 1.0) > NORM_TOLERANCE {
                return Err(CoreError::InvalidConfig(alloc::format!(
                    "row {i} has norm {norm}, expected 1"
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// Restrict to the given ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let row = self
                .row_of(id)
                .ok_or_else(|| CoreError::MissingGroundTruth(id.clone()))?;
            rows.push(row.to_vec());
        }
        let mut out = Self::from_rows(ids.to_vec(), rows)?;
        out.normalized = self.normalized;
        Ok(out)
    }
}
