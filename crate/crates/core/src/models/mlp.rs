//! Feed-forward binary classifier: ReLU hidden layers, dropout, sigmoid output.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::network::{flatten_grads, Dropout, Network};
use super::train::{fit, BatchContext, TrainConfig, Trainable, TrainingTrace};
use crate::error::{Error, Result};
use crate::numerics::{bce_with_logit, sigmoid, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {} outside [0, 0.5]",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden_sizes);
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub net: Network,
}

/// Mean BCE over a batch of logits, and dL/dlogit.
pub(crate) fn bce_loss_and_delta(logits: &DMatrix<f64>, y: &[f64]) -> (f64, DMatrix<f64>) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let delta = DMatrix::from_fn(logits.nrows(), 1, |i, _| {
        let z = logits[(i, 0)];
        loss += bce_with_logit(z, y[i]);
        (sigmoid(z) - y[i]) / n
    });
    (loss / n, delta)
}

impl MlpClassifier {
    pub fn new(
        arch: &MlpArchitecture,
        input_dim: usize,
        rng: &mut RngStream,
    ) -> Result<MlpClassifier> {
        arch.validate()?;
        Ok(MlpClassifier {
            net: Network::new(&arch.layer_sizes(input_dim), None, arch.dropout_rate, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.net.output(x)?.column(0).iter().copied().collect())
    }

    /// Deterministic probabilities (dropout off).
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// One stochastic pass with dropout active.
    pub fn predict_proba_dropout(&self, x: &DMatrix<f64>, rng: &mut RngStream) -> Result<Vec<f64>> {
        let out = self.net.forward(x, Dropout::Sample(rng))?.output;
        Ok(out.column(0).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Loss and flat gradient under the given dropout behaviour.
    pub fn loss_and_grad(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        dropout: Dropout<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.net.forward(x, dropout)?;
        let (loss, delta) = bce_loss_and_delta(&cache.output, y);
        let grads = self.net.backward(&cache, delta);
        Ok((loss, flatten_grads(&grads)))
    }

    pub fn mean_bce(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(logits
            .iter()
            .zip(y)
            .map(|(z, t)| bce_with_logit(*z, *t))
            .sum::<f64>()
            / y.len() as f64)
    }
}

impl Trainable for MlpClassifier {
    fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        self.net.set_flat_params(flat)
    }

    fn batch_loss_grad(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        _ctx: BatchContext,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(x, y, Dropout::Sample(rng))
    }

    fn validation_loss(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        self.mean_bce(x, y)
    }
}

pub fn train_mlp(
    config: &TrainConfig,
    arch: &MlpArchitecture,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    rng: &RngStream,
) -> Result<(MlpClassifier, TrainingTrace)> {
    let mut model = MlpClassifier::new(arch, x_train.ncols(), &mut rng.child("init", 0))?;
    let trace = fit(
        &mut model,
        config,
        x_train,
        y_train,
        x_val,
        y_val,
        &mut rng.child("batches", 0),
    )?;
    Ok((model, trace))
}
