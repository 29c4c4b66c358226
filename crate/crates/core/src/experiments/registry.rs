//! Model roster, the hyperparameters each family trains with, and the
//! dispatch from (family, hyperparameters) to a trained model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ensemble::{EnsembleConfig, EnsembleKind};
use crate::models::{
    fit_ppca, fit_temperature, train_autoencoder, train_bbb, train_ensemble, train_logreg,
    train_mlp, AutoencoderConfig, BbbConfig, MixturePrior, MlpArchitecture, ModelKind, TrainConfig,
    TrainedModel,
};
use crate::numerics::RngStream;

/// Architecture and optimizer settings of a plain network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
}

impl NnParams {
    pub fn arch(&self) -> MlpArchitecture {
        MlpArchitecture {
            hidden_sizes: self.hidden_sizes.clone(),
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbbParams {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub posterior_mu_init: f64,
    pub posterior_rho_init: f64,
    pub prior_pi: f64,
    pub prior_sigma_1: f64,
    pub prior_sigma_2: f64,
}

impl BbbParams {
    pub fn config(&self) -> BbbConfig {
        BbbConfig {
            arch: MlpArchitecture {
                hidden_sizes: self.hidden_sizes.clone(),
                dropout_rate: self.dropout_rate,
            },
            posterior_mu_init: self.posterior_mu_init,
            posterior_rho_init: self.posterior_rho_init,
            prior: MixturePrior {
                pi: self.prior_pi,
                sigma1: self.prior_sigma_1,
                sigma2: self.prior_sigma_2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeParams {
    pub hidden_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub learning_rate: f64,
}

impl AeParams {
    pub fn config(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            latent_dim: self.latent_dim,
            dropout_rate: 0.0,
        }
    }
}

/// Hyperparameters for every family. Defaults are the best values
/// reported for MIMIC-III; ensembles and the temperature-scaled network
/// reuse the plain network's settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub nn: NnParams,
    pub mc_dropout: NnParams,
    pub bbb: BbbParams,
    pub ae: AeParams,
    pub logreg_c: f64,
    pub ppca_components: usize,
    /// Ensemble members, and stochastic passes for MC Dropout and BBB.
    pub n_members: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            nn: NnParams {
                hidden_sizes: vec![30],
                dropout_rate: 0.157_483,
                learning_rate: 0.000_538,
            },
            mc_dropout: NnParams {
                hidden_sizes: vec![50],
                dropout_rate: 0.333_312,
                learning_rate: 0.000_526,
            },
            bbb: BbbParams {
                hidden_sizes: vec![25, 25, 25],
                dropout_rate: 0.177_533,
                learning_rate: 0.002_418,
                // Centred means: a shared positive offset over hundreds of inputs
                // saturates the first layer before training starts.
                posterior_mu_init: 0.0,
                posterior_rho_init: -5.982_621,
                prior_pi: 0.233_419,
                prior_sigma_1: 0.740_818,
                prior_sigma_2: 0.606_531,
            },
            ae: AeParams {
                hidden_sizes: vec![75],
                latent_dim: 15,
                learning_rate: 0.006_897,
            },
            logreg_c: 10.0,
            ppca_components: crate::models::ppca::DEFAULT_COMPONENTS,
            n_members: 10,
            max_epochs: 10,
            patience: 3,
            batch_size: 256,
        }
    }
}

impl Hyperparameters {
    pub fn train_config(&self, learning_rate: f64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::InvalidConfig("n_members must be >= 1".into()));
        }
        if self.ppca_components == 0 {
            return Err(Error::InvalidConfig("ppca_components must be >= 1".into()));
        }
        if !(self.logreg_c > 0.0) {
            return Err(Error::InvalidConfig("logreg_c must be > 0".into()));
        }
        self.train_config(1e-3).validate()
    }
}

/// Models taking part in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Registry {
    pub models: Vec<ModelKind>,
    pub hyperparameters: Hyperparameters,
    /// Adds an "Oracle" novelty score (0 for ID rows, 1 for OOD rows) to
    /// every OOD comparison, to check orientation end to end.
    pub inject_oracle: bool,
}

pub const ORACLE_NAME: &str = "Oracle";

impl Default for Registry {
    fn default() -> Self {
        Registry {
            models: ModelKind::ALL.to_vec(),
            hyperparameters: Hyperparameters::default(),
            inject_oracle: false,
        }
    }
}

impl Registry {
    pub fn with_models(models: &[ModelKind]) -> Registry {
        Registry {
            models: models.to_vec(),
            ..Registry::default()
        }
    }

    pub fn discriminators(&self) -> Vec<ModelKind> {
        self.models
            .iter()
            .copied()
            .filter(|k| !k.is_density())
            .collect()
    }
}

/// Scaled training and validation data.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub x_train: &'a DMatrix<f64>,
    pub y_train: &'a [f64],
    pub x_val: &'a DMatrix<f64>,
    pub y_val: &'a [f64],
}

pub fn labels_as_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| f64::from(l)).collect()
}

fn ensemble(
    kind: EnsembleKind,
    hp: &Hyperparameters,
    data: TrainData<'_>,
    rng: &RngStream,
) -> Result<TrainedModel> {
    let cfg = EnsembleConfig {
        kind,
        n_members: hp.n_members,
        arch: hp.nn.arch(),
        penalty_scale: 1.0,
        shared_member_seed: false,
    };
    let (model, _) = train_ensemble(
        &cfg,
        &hp.train_config(hp.nn.learning_rate),
        data.x_train,
        data.y_train,
        data.x_val,
        data.y_val,
        rng,
    )?;
    Ok(TrainedModel::Ensemble(model))
}

/// Trains one family. `rng` should be dedicated to this model.
pub fn train_model(
    kind: ModelKind,
    hp: &Hyperparameters,
    data: TrainData<'_>,
    rng: &RngStream,
) -> Result<TrainedModel> {
    let TrainData {
        x_train,
        y_train,
        x_val,
        y_val,
    } = data;
    let classes: std::collections::BTreeSet<u8> = y_train.iter().map(|&y| y as u8).collect();
    if !kind.is_density() && classes.len() < 2 {
        return Err(Error::SingleClass(format!("training labels for {kind}")));
    }
    Ok(match kind {
        ModelKind::Nn => {
            let (m, _) = train_mlp(
                &hp.train_config(hp.nn.learning_rate),
                &hp.nn.arch(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?;
            TrainedModel::Nn(m)
        }
        ModelKind::PlattScalingNn => {
            let (m, _) = train_mlp(
                &hp.train_config(hp.nn.learning_rate),
                &hp.nn.arch(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?;
            TrainedModel::PlattScalingNn(fit_temperature(&m, x_val, y_val)?)
        }
        ModelKind::McDropout => {
            let p = &hp.mc_dropout;
            let (m, _) = train_mlp(
                &hp.train_config(p.learning_rate),
                &p.arch(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?;
            TrainedModel::McDropout(m)
        }
        ModelKind::LogReg => TrainedModel::LogReg(train_logreg(x_train, y_train, hp.logreg_c)?),
        ModelKind::Bbb => {
            let p = &hp.bbb;
            let (m, _) = train_bbb(
                &hp.train_config(p.learning_rate),
                &p.config(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?;
            TrainedModel::Bbb(m)
        }
        ModelKind::NnEnsemble => ensemble(EnsembleKind::Plain, hp, data, rng)?,
        ModelKind::BootstrappedNnEnsemble => ensemble(EnsembleKind::Bootstrapped, hp, data, rng)?,
        ModelKind::AnchoredNnEnsemble => ensemble(EnsembleKind::Anchored, hp, data, rng)?,
        ModelKind::Ppca => {
            // keep q below both D and N on small inputs
            let q = hp
                .ppca_components
                .min(x_train.ncols().saturating_sub(1))
                .min(x_train.nrows().saturating_sub(1))
                .max(1);
            TrainedModel::Ppca(fit_ppca(x_train, q)?)
        }
        ModelKind::Ae => {
            let p = &hp.ae;
            let (m, _) = train_autoencoder(
                &hp.train_config(p.learning_rate),
                &p.config(),
                x_train,
                x_val,
                rng,
            )?;
            TrainedModel::Autoencoder(m)
        }
    })
}

/// Trains every registry model, each on its own stream
/// `rng.child(model name, 0)`. Models train concurrently; the result is
/// in registry order.
pub fn train_registry(
    registry: &Registry,
    data: TrainData<'_>,
    rng: &RngStream,
) -> Result<Vec<TrainedModel>> {
    use rayon::prelude::*;
    registry.hyperparameters.validate()?;
    registry
        .models
        .par_iter()
        .map(|&kind| {
            train_model(
                kind,
                &registry.hyperparameters,
                data,
                &rng.child(kind.name(), 0),
            )
        })
        .collect()
}
