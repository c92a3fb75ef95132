//! Trainable projection head: affine map followed by L2 normalization.
//!
//! Stands in for a large embedder at desk scale; all gradients are exact
//! and checked against finite differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::math;
use crate::rng::Rng;

/// `y = normalize(W x + b)` with `W: out_dim x in_dim` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Cached pre-normalization rows, needed to backpropagate through the norm.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Raw affine outputs, row-major `n x out_dim`.
    pub raw: Vec<f64>,
    /// L2 norms of the raw rows.
    pub norms: Vec<f64>,
    /// Normalized outputs, row-major `n x out_dim`.
    pub output: Vec<f64>,
    pub rows: usize,
}

/// Parameter gradients matching [`ProjectionHead`] layout.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    /// Gaussian init scaled by `1/sqrt(in_dim)`, zero bias.
    pub fn random_init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / math::sqrt(in_dim as f64);
        let weight = (0..out_dim * in_dim)
            .map(|_| rng.next_gaussian() * scale)
            .collect();
        ProjectionHead {
            weight,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        ProjectionHead {
            weight,
            bias: vec![0.0; dim],
            in_dim: dim,
            out_dim: dim,
        }
    }

    pub fn from_parts(weight: Vec<f64>, bias: Vec<f64>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(CoreError::LengthMismatch {
                left: weight.len() + bias.len(),
                right: in_dim * out_dim + out_dim,
            });
        }
        if weight.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("projection head parameters"));
        }
        Ok(ProjectionHead {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Forward pass keeping the intermediates needed for backprop.
    pub fn forward_traced(&self, features: &[Vec<f64>]) -> Result<ForwardTrace> {
        let rows = features.len();
        let mut raw = vec![0.0; rows * self.out_dim];
        let mut norms = vec![0.0; rows];
        let mut output = vec![0.0; rows * self.out_dim];
        for (r, x) in features.iter().enumerate() {
            if x.len() != self.in_dim {
                return Err(CoreError::DimMismatch {
                    left: x.len(),
                    right: self.in_dim,
                });
            }
            let out_row = &mut raw[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, slot) in out_row.iter_mut().enumerate() {
                *slot = self.bias[o] + math::dot(&self.weight[o * self.in_dim..(o + 1) * self.in_dim], x);
            }
            let norm = math::l2_norm(out_row);
            if norm < 1e-12 {
                return Err(CoreError::ZeroVector);
            }
            norms[r] = norm;
            for (o, &v) in out_row.iter().enumerate() {
                output[r * self.out_dim + o] = v / norm;
            }
        }
        Ok(ForwardTrace {
            raw,
            norms,
            output,
            rows,
        })
    }

    /// Forward pass producing a normalized [`EmbeddingMatrix`].
    pub fn forward(&self, ids: Vec<String>, features: &[Vec<f64>]) -> Result<EmbeddingMatrix> {
        let trace = self.forward_traced(features)?;
        EmbeddingMatrix::from_flat(ids, trace.output, self.out_dim)
            .and_then(|m| m.assert_normalized())
    }

    /// Backward pass: given `dL/d(output)` rows, accumulates parameter
    /// gradients. Normalization backprop:
    /// `dL/draw = (g - y * (g . y)) / ||raw||`.
    pub fn backward(
        &self,
        features: &[Vec<f64>],
        trace: &ForwardTrace,
        grad_output: &[f64],
    ) -> Result<HeadGradients> {
        if grad_output.len() != trace.rows * self.out_dim {
            return Err(CoreError::LengthMismatch {
                left: grad_output.len(),
                right: trace.rows * self.out_dim,
            });
        }
        let mut grad_weight = vec![0.0; self.weight.len()];
        let mut grad_bias = vec![0.0; self.out_dim];
        let mut grad_raw = vec![0.0; self.out_dim];
        for (r, x) in features.iter().enumerate() {
            let y = &trace.output[r * self.out_dim..(r + 1) * self.out_dim];
            let g = &grad_output[r * self.out_dim..(r + 1) * self.out_dim];
            let g_dot_y = math::dot(g, y);
            let inv_norm = 1.0 / trace.norms[r];
            for o in 0..self.out_dim {
                grad_raw[o] = (g[o] - y[o] * g_dot_y) * inv_norm;
            }
            for o in 0..self.out_dim {
                let gr = grad_raw[o];
                grad_bias[o] += gr;
                let w_row = &mut grad_weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (slot, &xi) in w_row.iter_mut().zip(x.iter()) {
                    *slot += gr * xi;
                }
            }
        }
        Ok(HeadGradients {
            weight: grad_weight,
            bias: grad_bias,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.iter().chain(self.bias.iter()).any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("projection head parameters"));
        }
        Ok(())
    }
}

/// Row ids like `q000`, `q001`, ... used by tests and the trainer.
pub fn numbered_ids(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i:04}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> Vec<Vec<f64>> {
        data.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn identity_head_passes_unit_rows_through() {
        let head = ProjectionHead::identity(3);
        let input = rows(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let out = head
            .forward(numbered_ids("r", 2), &input)
            .unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(out.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let mut rng = Rng::seed_from_u64(10);
        let head = ProjectionHead::random_init(5, 3, &mut rng);
        let input: Vec<Vec<f64>> = (0..7).map(|_| rng.gaussian_vec(5)).collect();
        let out = head.forward(numbered_ids("r", 7), &input).unwrap();
        for i in 0..7 {
            assert!(math::abs(math::l2_norm(out.row(i)) - 1.0) < 1e-6);
        }
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let head = ProjectionHead::identity(3);
        assert!(matches!(
            head.forward(numbered_ids("r", 1), &rows(&[&[1.0, 2.0]])),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    /// Finite-difference check of dL/dW and dL/db through the
    /// normalize-then-dot chain, L = sum of a fixed linear functional of the
    /// outputs.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = Rng::seed_from_u64(77);
        let head = ProjectionHead::random_init(4, 4, &mut rng);
        let input: Vec<Vec<f64>> = (0..4).map(|_| rng.gaussian_vec(4)).collect();
        let probe: Vec<f64> = rng.gaussian_vec(4 * 4);

        let loss_of = |h: &ProjectionHead| -> f64 {
            let trace = h.forward_traced(&input).unwrap();
            math::dot(&trace.output, &probe)
        };

        let trace = head.forward_traced(&input).unwrap();
        let grads = head.backward(&input, &trace, &probe).unwrap();

        let eps = 1e-6;
        for p in 0..head.weight.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            plus.weight[p] += eps;
            minus.weight[p] -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let an = grads.weight[p];
            let rel = math::abs(fd - an) / math::abs(fd).max(math::abs(an)).max(1e-8);
            assert!(rel < 1e-5, "weight[{p}]: fd {fd} vs analytic {an}");
        }
        for p in 0..head.bias.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            plus.bias[p] += eps;
            minus.bias[p] -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let an = grads.bias[p];
            let rel = math::abs(fd - an) / math::abs(fd).max(math::abs(an)).max(1e-8);
            assert!(rel < 1e-5, "bias[{p}]: fd {fd} vs analytic {an}");
        }
    }
}
