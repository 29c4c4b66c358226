//! The model zoo: discriminators, density baselines, and the shared
//! training machinery.

pub mod autoencoder;
pub mod bbb;
pub mod ensemble;
pub mod logreg;
pub mod mlp;
pub mod network;
pub mod persist;
pub mod ppca;
pub mod temperature;
pub mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use autoencoder::{
    reconstruction_error, train_autoencoder, AutoencoderConfig, AutoencoderModel,
};
pub use bbb::{train_bbb, BbbConfig, BbbModel, MixturePrior};
pub use ensemble::{anchored_penalty, train_ensemble, EnsembleConfig, EnsembleKind, EnsembleModel};
pub use logreg::{train_logreg, LogRegModel};
pub use mlp::{train_mlp, MlpArchitecture, MlpClassifier};
pub use ppca::{fit_ppca, ppca_log_likelihood, PpcaModel};
pub use temperature::{fit_temperature, TemperatureScaled};
pub use train::{TrainConfig, TrainingTrace};

use crate::error::{Error, Result};
use crate::metrics::{MetricKind, PredictionEnsemble, UncertaintyScores};
use crate::numerics::RngStream;

/// The roster of model families, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "AnchoredNNEnsemble")]
    AnchoredNnEnsemble,
    #[serde(rename = "BBB")]
    Bbb,
    #[serde(rename = "BootstrappedNNEnsemble")]
    BootstrappedNnEnsemble,
    LogReg,
    #[serde(rename = "MCDropout")]
    McDropout,
    #[serde(rename = "NNEnsemble")]
    NnEnsemble,
    #[serde(rename = "NN")]
    Nn,
    #[serde(rename = "PlattScalingNN")]
    PlattScalingNn,
    #[serde(rename = "PPCA")]
    Ppca,
    #[serde(rename = "AE")]
    Ae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::AnchoredNnEnsemble,
        ModelKind::Bbb,
        ModelKind::BootstrappedNnEnsemble,
        ModelKind::LogReg,
        ModelKind::McDropout,
        ModelKind::NnEnsemble,
        ModelKind::Nn,
        ModelKind::PlattScalingNn,
        ModelKind::Ppca,
        ModelKind::Ae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AnchoredNnEnsemble => "AnchoredNNEnsemble",
            ModelKind::Bbb => "BBB",
            ModelKind::BootstrappedNnEnsemble => "BootstrappedNNEnsemble",
            ModelKind::LogReg => "LogReg",
            ModelKind::McDropout => "MCDropout",
            ModelKind::NnEnsemble => "NNEnsemble",
            ModelKind::Nn => "NN",
            ModelKind::PlattScalingNn => "PlattScalingNN",
            ModelKind::Ppca => "PPCA",
            ModelKind::Ae => "AE",
        }
    }

    /// Uncertainty metrics reported for this family.
    pub fn metrics(self) -> &'static [MetricKind] {
        use MetricKind::*;
        match self {
            ModelKind::Nn | ModelKind::PlattScalingNn | ModelKind::LogReg => &[MaxProb, Entropy],
            ModelKind::McDropout
            | ModelKind::Bbb
            | ModelKind::NnEnsemble
            | ModelKind::BootstrappedNnEnsemble
            | ModelKind::AnchoredNnEnsemble => &[Std, Entropy, MutualInformation],
            ModelKind::Ppca | ModelKind::Ae => &[Novelty],
        }
    }

    pub fn is_density(self) -> bool {
        matches!(self, ModelKind::Ppca | ModelKind::Ae)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model `{s}`")))
    }
}

/// A fitted member of the zoo.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Nn(MlpClassifier),
    PlattScalingNn(TemperatureScaled),
    LogReg(LogRegModel),
    McDropout(MlpClassifier),
    Bbb(BbbModel),
    Ensemble(EnsembleModel),
    Ppca(PpcaModel),
    Autoencoder(AutoencoderModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Nn(_) => ModelKind::Nn,
            TrainedModel::PlattScalingNn(_) => ModelKind::PlattScalingNn,
            TrainedModel::LogReg(_) => ModelKind::LogReg,
            TrainedModel::McDropout(_) => ModelKind::McDropout,
            TrainedModel::Bbb(_) => ModelKind::Bbb,
            TrainedModel::Ensemble(e) => match e.kind {
                EnsembleKind::Plain => ModelKind::NnEnsemble,
                EnsembleKind::Bootstrapped => ModelKind::BootstrappedNnEnsemble,
                EnsembleKind::Anchored => ModelKind::AnchoredNnEnsemble,
            },
            TrainedModel::Ppca(_) => ModelKind::Ppca,
            TrainedModel::Autoencoder(_) => ModelKind::Ae,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Nn(m) | TrainedModel::McDropout(m) => m.input_dim(),
            TrainedModel::PlattScalingNn(m) => m.base.input_dim(),
            TrainedModel::LogReg(m) => m.input_dim(),
            TrainedModel::Bbb(m) => m.input_dim(),
            TrainedModel::Ensemble(m) => m.input_dim(),
            TrainedModel::Ppca(m) => m.dim(),
            TrainedModel::Autoencoder(m) => m.input_dim(),
        }
    }

    /// K stochastic predictions per row. Deterministic single models give
    /// one row whatever `k` is; ensembles require `k` to equal the member
    /// count.
    pub fn sample_predictions(
        &self,
        x: &DMatrix<f64>,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<PredictionEnsemble> {
        if k == 0 {
            return Err(Error::InvalidConfig("sample count must be >= 1".into()));
        }
        match self {
            TrainedModel::Nn(m) => PredictionEnsemble::single(m.predict_proba(x)?),
            TrainedModel::PlattScalingNn(m) => PredictionEnsemble::single(m.predict_proba(x)?),
            TrainedModel::LogReg(m) => PredictionEnsemble::single(m.predict_proba(x)?),
            TrainedModel::McDropout(m) => {
                let rows = (0..k)
                    .map(|_| m.predict_proba_dropout(x, rng))
                    .collect::<Result<Vec<_>>>()?;
                PredictionEnsemble::from_rows(rows)
            }
            TrainedModel::Bbb(m) => {
                let rows = (0..k)
                    .map(|_| m.predict_proba_sample(x, rng))
                    .collect::<Result<Vec<_>>>()?;
                PredictionEnsemble::from_rows(rows)
            }
            TrainedModel::Ensemble(m) => {
                if k != m.n_members() {
                    return Err(Error::InvalidConfig(format!(
                        "ensemble has {} members but {k} samples were requested",
                        m.n_members()
                    )));
                }
                m.predict_members(x)
            }
            TrainedModel::Ppca(_) | TrainedModel::Autoencoder(_) => {
                Err(Error::InvalidConfig(format!(
                    "{} is a density model and makes no class predictions",
                    self.kind()
                )))
            }
        }
    }

    /// Sample count used for this model when the caller asks for `k`.
    pub fn effective_samples(&self, k: usize) -> usize {
        match self {
            TrainedModel::Ensemble(m) => m.n_members(),
            _ => k,
        }
    }

    /// Higher-is-more-novel density score (density models only).
    pub fn density_novelty(&self, x: &DMatrix<f64>) -> Result<UncertaintyScores> {
        let values = match self {
            TrainedModel::Ppca(m) => m
                .log_likelihood_rows(x)?
                .into_iter()
                .map(|ll| -ll)
                .collect(),
            TrainedModel::Autoencoder(m) => reconstruction_error(m, x)?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{} is not a density model",
                    self.kind()
                )))
            }
        };
        Ok(UncertaintyScores::new(MetricKind::Novelty, values))
    }

    /// Every registered metric for this model on `x`, in registry order.
    pub fn uncertainty(
        &self,
        x: &DMatrix<f64>,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<UncertaintyScores>> {
        if self.kind().is_density() {
            return Ok(vec![self.density_novelty(x)?]);
        }
        let ens = self.sample_predictions(x, self.effective_samples(k), rng)?;
        self.kind()
            .metrics()
            .iter()
            .map(|&m| crate::metrics::score_ensemble(m, &ens))
            .collect()
    }

    /// Positive-class probability used for mortality AUC: the mean over K
    /// stochastic predictions, or the single deterministic prediction.
    pub fn mortality_score(
        &self,
        x: &DMatrix<f64>,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        Ok(self
            .sample_predictions(x, self.effective_samples(k), rng)?
            .mean())
    }
}
