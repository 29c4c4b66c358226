//! L2-regularized logistic regression.
//!
//! Objective: Σᵢ BCE(xᵢ·w + b, yᵢ) + ‖w‖² / (2C), bias unpenalized. Solved
//! by damped Newton iterations with Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bce_with_logit, sigmoid};

pub const C_GRID: [f64; 4] = [10.0, 100.0, 1000.0, 10000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LogRegSolver {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogRegSolver {
    fn default() -> Self {
        LogRegSolver {
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

fn logits(x: &DMatrix<f64>, w: &DVector<f64>, b: f64) -> DVector<f64> {
    let mut z = x * w;
    z.add_scalar_mut(b);
    z
}

/// Objective value for parameters `theta = [w..., b]`.
pub fn logreg_objective(x: &DMatrix<f64>, y: &[f64], c: f64, theta: &[f64]) -> f64 {
    let d = x.ncols();
    let w = DVector::from_column_slice(&theta[..d]);
    let z = logits(x, &w, theta[d]);
    let data: f64 = z.iter().zip(y).map(|(z, t)| bce_with_logit(*z, *t)).sum();
    data + w.norm_squared() / (2.0 * c)
}

/// Gradient `[∂w..., ∂b]` of [`logreg_objective`].
pub fn logreg_gradient(x: &DMatrix<f64>, y: &[f64], c: f64, theta: &[f64]) -> Vec<f64> {
    let d = x.ncols();
    let w = DVector::from_column_slice(&theta[..d]);
    let z = logits(x, &w, theta[d]);
    let r = DVector::from_iterator(y.len(), z.iter().zip(y).map(|(z, t)| sigmoid(*z) - t));
    let gw = x.tr_mul(&r) + &w / c;
    let mut g: Vec<f64> = gw.iter().copied().collect();
    g.push(r.sum());
    g
}

pub fn train_logreg(x: &DMatrix<f64>, labels: &[f64], c: f64) -> Result<LogRegModel> {
    train_logreg_with(x, labels, c, LogRegSolver::default())
}

pub fn train_logreg_with(
    x: &DMatrix<f64>,
    y: &[f64],
    c: f64,
    solver: LogRegSolver,
) -> Result<LogRegModel> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "inverse regularization C must be > 0, got {c}"
        )));
    }
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let (n, d) = (x.nrows(), x.ncols());
    let mut theta = vec![0.0; d + 1];
    let mut value = logreg_objective(x, y, c, &theta);
    let mut grad = logreg_gradient(x, y, c, &theta);
    let mut gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut iterations = 0;

    while gnorm >= solver.tolerance && iterations < solver.max_iterations {
        iterations += 1;
        let w = DVector::from_column_slice(&theta[..d]);
        let z = logits(x, &w, theta[d]);
        // Hessian of [w, b]: Xaᵀ S Xa + diag(1/C, ..., 1/C, 0)
        let mut xa = DMatrix::zeros(n, d + 1);
        for i in 0..n {
            let p = sigmoid(z[i]);
            let s = (p * (1.0 - p)).sqrt();
            for j in 0..d {
                xa[(i, j)] = x[(i, j)] * s;
            }
            xa[(i, d)] = s;
        }
        let mut h = xa.tr_mul(&xa);
        for j in 0..d {
            h[(j, j)] += 1.0 / c;
        }
        let g = DVector::from_column_slice(&grad);
        let mut jitter = 0.0;
        let step = loop {
            let mut hj = h.clone();
            if jitter > 0.0 {
                for j in 0..=d {
                    hj[(j, j)] += jitter;
                }
            }
            if let Some(chol) = hj.cholesky() {
                break chol.solve(&g);
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e6 {
                break g.clone();
            }
        };
        let slope: f64 = -step.dot(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(p, s)| p - t * s)
                .collect();
            let v = logreg_objective(x, y, c, &cand);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        grad = logreg_gradient(x, y, c, &theta);
        gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !accepted {
            break;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("logistic regression objective".into()));
    }
    Ok(LogRegModel {
        bias: theta[d],
        weights: theta[..d].to_vec(),
        c,
        converged: gnorm < solver.tolerance,
        iterations,
        gradient_norm: gnorm,
    })
}

impl LogRegModel {
    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let w = DVector::from_column_slice(&self.weights);
        Ok(logits(x, &w, self.bias)
            .iter()
            .map(|&z| sigmoid(z))
            .collect())
    }

    pub fn mean_bce(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let w = DVector::from_column_slice(&self.weights);
        let z = logits(x, &w, self.bias);
        Ok(z.iter()
            .zip(y)
            .map(|(z, t)| bce_with_logit(*z, *t))
            .sum::<f64>()
            / y.len() as f64)
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.push(self.bias);
        t
    }
}
