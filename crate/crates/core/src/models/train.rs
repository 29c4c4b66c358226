//! Adam and the shared minibatch / early-stopping training loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 10,
            patience: 3,
            batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn with_learning_rate(&self, lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(
                "patience must not exceed max_epochs".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Per-batch information a loss may need.
#[derive(Debug, Clone, Copy)]
pub struct BatchContext {
    pub n_batches: usize,
    pub n_train: usize,
}

/// A model trainable by [`fit`].
pub trait Trainable {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, flat: &[f64]);
    /// Loss and flat gradient on one minibatch.
    fn batch_loss_grad(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        ctx: BatchContext,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>)>;
    /// Deterministic loss used for early stopping and model selection.
    fn validation_loss(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Minibatch Adam with early stopping on validation loss. The returned
/// model holds the parameters of the best validation epoch.
pub fn fit<M: Trainable>(
    model: &mut M,
    config: &TrainConfig,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    rng: &mut RngStream,
) -> Result<TrainingTrace> {
    config.validate()?;
    let n = x_train.nrows();
    if n == 0 || x_val.nrows() == 0 {
        return Err(Error::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if y_train.len() != n || y_val.len() != x_val.nrows() {
        return Err(Error::Dimension {
            expected: n,
            got: y_train.len(),
        });
    }
    let batch_size = config.batch_size.min(n);
    let n_batches = n.div_ceil(batch_size);
    let ctx = BatchContext {
        n_batches,
        n_train: n,
    };
    let full_batch = n_batches == 1;

    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut best_params = params.clone();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.max_epochs {
        if !full_batch {
            rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let (xb, yb) = if full_batch {
                (x_train.clone(), y_train.to_vec())
            } else {
                (
                    x_train.select_rows(chunk),
                    chunk.iter().map(|&i| y_train[i]).collect(),
                )
            };
            let (loss, grad) = model.batch_loss_grad(&xb, &yb, ctx, rng)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training loss diverged in epoch {epoch}"
                )));
            }
            total += loss;
            adam.step(&mut params, &grad);
            model.set_flat_params(&params);
        }
        let train_loss = total / n_batches as f64;
        let val_loss = model.validation_loss(x_val, y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss diverged in epoch {epoch}"
            )));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best {
            best = val_loss;
            best_epoch = epoch;
            best_params.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if best_epoch > 0 {
        model.set_flat_params(&best_params);
    } else {
        // max_epochs == 0
        best = model.validation_loss(x_val, y_val)?;
    }
    Ok(TrainingTrace {
        epochs,
        best_epoch,
        best_val_loss: best,
    })
}
