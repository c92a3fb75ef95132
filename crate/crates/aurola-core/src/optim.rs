//! First-order optimizers over flat parameter vectors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam {
        first_moment: Vec<f64>,
        second_moment: Vec<f64>,
        step: u64,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, parameter_count: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                first_moment: vec![0.0; parameter_count],
                second_moment: vec![0.0; parameter_count],
                step: 0,
            },
        }
    }

    /// One update in place. Adam uses the textbook bias-corrected form with
    /// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                first_moment,
                second_moment,
                step,
            } => {
                *step += 1;
                let t = *step as i32;
                let bias1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
                let bias2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
                for i in 0..params.len() {
                    let g = grads[i];
                    first_moment[i] = ADAM_BETA1 * first_moment[i] + (1.0 - ADAM_BETA1) * g;
                    second_moment[i] = ADAM_BETA2 * second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = first_moment[i] / bias1;
                    let v_hat = second_moment[i] / bias2;
                    params[i] -= lr * m_hat / (math::sqrt(v_hat) + ADAM_EPSILON);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_is_plain_descent() {
        let mut params = vec![1.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 2);
        opt.step(&mut params, &[0.5, -1.0], 0.1);
        assert!(math::abs(params[0] - 0.95) < 1e-15);
        assert!(math::abs(params[1] - (-1.9)) < 1e-15);
    }

    /// One Adam step from known (m, v, g) against the textbook update.
    #[test]
    fn adam_matches_textbook_single_step() {
        let g = 0.3;
        let m0 = 0.1;
        let v0 = 0.02;
        let lr = 0.01;
        let mut opt = Optimizer::Adam {
            first_moment: vec![m0],
            second_moment: vec![v0],
            step: 3,
        };
        let mut params = vec![0.7];
        opt.step(&mut params, &[g], lr);

        let m1 = ADAM_BETA1 * m0 + (1.0 - ADAM_BETA1) * g;
        let v1 = ADAM_BETA2 * v0 + (1.0 - ADAM_BETA2) * g * g;
        let t = 4.0;
        let m_hat = m1 / (1.0 - libm::pow(ADAM_BETA1, t));
        let v_hat = v1 / (1.0 - libm::pow(ADAM_BETA2, t));
        let expected = 0.7 - lr * m_hat / (math::sqrt(v_hat) + ADAM_EPSILON);
        assert!(math::abs(params[0] - expected) < 1e-12, "{} vs {expected}", params[0]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut params = vec![0.25, -0.5, 1.75];
        let before = params.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 3);
        for _ in 0..5 {
            opt.step(&mut params, &[1.0, 2.0, 3.0], 0.0);
        }
        assert_eq!(params, before);
    }
}
