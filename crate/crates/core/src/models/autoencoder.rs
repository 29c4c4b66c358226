//! Autoencoder novelty baseline scored by mean squared reconstruction error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::network::{flatten_grads, Activation, Dropout, Network};
use super::train::{fit, BatchContext, TrainConfig, Trainable, TrainingTrace};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    /// Encoder hidden sizes; the decoder mirrors them.
    pub hidden_sizes: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden_sizes: vec![75],
            latent_dim: 15,
            dropout_rate: 0.0,
        }
    }
}

impl AutoencoderConfig {
    /// Layer sizes and activations: ReLU hidden layers, linear bottleneck,
    /// linear output.
    pub fn layout(&self, input_dim: usize) -> (Vec<usize>, Vec<Activation>) {
        let mut sizes = vec![input_dim];
        let mut acts = Vec::new();
        for &h in &self.hidden_sizes {
            sizes.push(h);
            acts.push(Activation::Relu);
        }
        sizes.push(self.latent_dim);
        acts.push(Activation::Identity);
        for &h in self.hidden_sizes.iter().rev() {
            sizes.push(h);
            acts.push(Activation::Relu);
        }
        sizes.push(input_dim);
        acts.push(Activation::Identity);
        (sizes, acts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub net: Network,
    pub latent_dim: usize,
}

impl AutoencoderModel {
    pub fn new(
        config: &AutoencoderConfig,
        input_dim: usize,
        rng: &mut RngStream,
    ) -> Result<AutoencoderModel> {
        if config.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be positive".into()));
        }
        let (sizes, acts) = config.layout(input_dim);
        Ok(AutoencoderModel {
            net: Network::new(&sizes, Some(&acts), config.dropout_rate, rng)?,
            latent_dim: config.latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn reconstruct(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.net.output(x)
    }

    /// Mean over all n·D cells of the squared error, and its gradient.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, dropout: Dropout<'_>) -> Result<(f64, Vec<f64>)> {
        let cache = self.net.forward(x, dropout)?;
        let diff = &cache.output - x;
        let cells = diff.len() as f64;
        let loss = diff.norm_squared() / cells;
        let delta = diff * (2.0 / cells);
        Ok((loss, flatten_grads(&self.net.backward(&cache, delta))))
    }

    pub fn mean_mse(&self, x: &DMatrix<f64>) -> Result<f64> {
        let diff = self.reconstruct(x)? - x;
        Ok(diff.norm_squared() / diff.len() as f64)
    }
}

/// Per-row mean over D of the squared reconstruction error.
pub fn reconstruction_error(model: &AutoencoderModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let diff = model.reconstruct(x)? - x;
    let d = x.ncols() as f64;
    Ok(diff.row_iter().map(|r| r.norm_squared() / d).collect())
}

impl Trainable for AutoencoderModel {
    fn flat_params(&self) -> Vec<f64> {
        self.net.flat_params()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        self.net.set_flat_params(flat)
    }

    fn batch_loss_grad(
        &self,
        x: &DMatrix<f64>,
        _y: &[f64],
        _ctx: BatchContext,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(x, Dropout::Sample(rng))
    }

    fn validation_loss(&self, x: &DMatrix<f64>, _y: &[f64]) -> Result<f64> {
        self.mean_mse(x)
    }
}

pub fn train_autoencoder(
    train: &TrainConfig,
    config: &AutoencoderConfig,
    x_train: &DMatrix<f64>,
    x_val: &DMatrix<f64>,
    rng: &RngStream,
) -> Result<(AutoencoderModel, TrainingTrace)> {
    let mut model = AutoencoderModel::new(config, x_train.ncols(), &mut rng.child("init", 0))?;
    let y_train = vec![0.0; x_train.nrows()];
    let y_val = vec![0.0; x_val.nrows()];
    let trace = fit(
        &mut model,
        train,
        x_train,
        &y_train,
        x_val,
        &y_val,
        &mut rng.child("batches", 0),
    )?;
    Ok((model, trace))
}
