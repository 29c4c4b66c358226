//! Random hyperparameter search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::registry::{AeParams, BbbParams, Hyperparameters, NnParams, TrainData};
use crate::error::{Error, Result};
use crate::models::{train_autoencoder, train_bbb, train_logreg, train_mlp, ModelKind};
use crate::numerics::RngStream;

/// Sampling rule for one scalar hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    Categorical {
        options: Vec<f64>,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Exponent drawn uniformly, then exponentiated.
    LogUniform {
        low: f64,
        high: f64,
    },
}

impl Rule {
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            Rule::Categorical { options } => options[rng.below(options.len())],
            Rule::Uniform { low, high } => rng.uniform_range(*low, *high),
            Rule::LogUniform { low, high } => rng
                .uniform_range(low.ln(), high.ln())
                .exp()
                .clamp(*low, *high),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            Rule::Categorical { options } => options.contains(&v),
            Rule::Uniform { low, high } | Rule::LogUniform { low, high } => {
                (*low..=*high).contains(&v)
            }
        }
    }
}

/// Hidden layout: 1..=max_layers layers, all of one size drawn from `sizes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSizesRule {
    pub sizes: Vec<usize>,
    pub min_layers: usize,
    pub max_layers: usize,
}

impl HiddenSizesRule {
    pub fn sample(&self, rng: &mut RngStream) -> Vec<usize> {
        let layers = self.min_layers + rng.below(self.max_layers - self.min_layers + 1);
        let size = self.sizes[rng.below(self.sizes.len())];
        vec![size; layers]
    }

    pub fn contains(&self, v: &[usize]) -> bool {
        (self.min_layers..=self.max_layers).contains(&v.len())
            && v.iter().all(|s| self.sizes.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden_sizes: HiddenSizesRule,
    pub latent_dim: Rule,
    pub learning_rate: Rule,
    pub dropout_rate: Rule,
    pub posterior_rho_init: Rule,
    pub posterior_mu_init: Rule,
    pub prior_pi: Rule,
    pub prior_sigma_1: Rule,
    pub prior_sigma_2: Rule,
    pub logreg_c: Rule,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let sigma = Rule::Uniform {
            low: (-0.8f64).exp(),
            high: 0.1f64.exp(),
        };
        SearchSpace {
            hidden_sizes: HiddenSizesRule {
                sizes: vec![25, 30, 50, 75, 100],
                min_layers: 1,
                max_layers: 4,
            },
            latent_dim: Rule::Categorical {
                options: vec![5.0, 10.0, 15.0, 20.0],
            },
            learning_rate: Rule::LogUniform {
                low: 1e-4,
                high: 0.1,
            },
            dropout_rate: Rule::Uniform {
                low: 0.0,
                high: 0.5,
            },
            posterior_rho_init: Rule::Uniform {
                low: -8.0,
                high: -2.0,
            },
            posterior_mu_init: Rule::Uniform {
                low: -0.6,
                high: 0.6,
            },
            prior_pi: Rule::Uniform {
                low: 0.1,
                high: 0.9,
            },
            prior_sigma_1: sigma.clone(),
            prior_sigma_2: sigma,
            logreg_c: Rule::Categorical {
                options: crate::models::logreg::C_GRID.to_vec(),
            },
        }
    }
}

/// A tuned configuration for one searchable family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum TunedConfig {
    #[serde(rename = "NN")]
    Nn(NnParams),
    #[serde(rename = "MCDropout")]
    McDropout(NnParams),
    #[serde(rename = "BBB")]
    Bbb(BbbParams),
    #[serde(rename = "AE")]
    Ae(AeParams),
    LogReg {
        c: f64,
    },
}

impl TunedConfig {
    /// Writes this configuration into a full hyperparameter set.
    pub fn apply(&self, hp: &mut Hyperparameters) {
        match self {
            TunedConfig::Nn(p) => hp.nn = p.clone(),
            TunedConfig::McDropout(p) => hp.mc_dropout = p.clone(),
            TunedConfig::Bbb(p) => hp.bbb = p.clone(),
            TunedConfig::Ae(p) => hp.ae = p.clone(),
            TunedConfig::LogReg { c } => hp.logreg_c = *c,
        }
    }
}

impl SearchSpace {
    fn nn(&self, rng: &mut RngStream) -> NnParams {
        NnParams {
            hidden_sizes: self.hidden_sizes.sample(rng),
            dropout_rate: self.dropout_rate.sample(rng),
            learning_rate: self.learning_rate.sample(rng),
        }
    }

    pub fn sample(&self, kind: ModelKind, rng: &mut RngStream) -> Result<TunedConfig> {
        Ok(match kind {
            ModelKind::Nn => TunedConfig::Nn(self.nn(rng)),
            ModelKind::McDropout => TunedConfig::McDropout(self.nn(rng)),
            ModelKind::Bbb => TunedConfig::Bbb(BbbParams {
                hidden_sizes: self.hidden_sizes.sample(rng),
                dropout_rate: self.dropout_rate.sample(rng),
                learning_rate: self.learning_rate.sample(rng),
                posterior_mu_init: self.posterior_mu_init.sample(rng),
                posterior_rho_init: self.posterior_rho_init.sample(rng),
                prior_pi: self.prior_pi.sample(rng),
                prior_sigma_1: self.prior_sigma_1.sample(rng),
                prior_sigma_2: self.prior_sigma_2.sample(rng),
            }),
            ModelKind::Ae => TunedConfig::Ae(AeParams {
                hidden_sizes: self.hidden_sizes.sample(rng),
                latent_dim: self.latent_dim.sample(rng) as usize,
                learning_rate: self.learning_rate.sample(rng),
            }),
            ModelKind::LogReg => TunedConfig::LogReg {
                c: self.logreg_c.sample(rng),
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{other} is not tuned by random search"
                )))
            }
        })
    }

    /// Whether every value of `config` lies inside its rule.
    pub fn contains(&self, config: &TunedConfig) -> bool {
        let nn = |p: &NnParams| {
            self.hidden_sizes.contains(&p.hidden_sizes)
                && self.dropout_rate.contains(p.dropout_rate)
                && self.learning_rate.contains(p.learning_rate)
        };
        match config {
            TunedConfig::Nn(p) | TunedConfig::McDropout(p) => nn(p),
            TunedConfig::Bbb(p) => {
                self.hidden_sizes.contains(&p.hidden_sizes)
                    && self.dropout_rate.contains(p.dropout_rate)
                    && self.learning_rate.contains(p.learning_rate)
                    && self.posterior_mu_init.contains(p.posterior_mu_init)
                    && self.posterior_rho_init.contains(p.posterior_rho_init)
                    && self.prior_pi.contains(p.prior_pi)
                    && self.prior_sigma_1.contains(p.prior_sigma_1)
                    && self.prior_sigma_2.contains(p.prior_sigma_2)
            }
            TunedConfig::Ae(p) => {
                self.hidden_sizes.contains(&p.hidden_sizes)
                    && self.latent_dim.contains(p.latent_dim as f64)
                    && self.learning_rate.contains(p.learning_rate)
            }
            TunedConfig::LogReg { c } => self.logreg_c.contains(*c),
        }
    }
}

/// Trial counts: 40 for the autoencoder, the plain network and MC Dropout,
/// 60 for BBB; logistic regression walks its C grid.
pub fn default_budget(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Bbb => 60,
        ModelKind::LogReg => crate::models::logreg::C_GRID.len(),
        _ => 40,
    }
}

pub const SEARCHABLE: [ModelKind; 5] = [
    ModelKind::Nn,
    ModelKind::McDropout,
    ModelKind::Bbb,
    ModelKind::Ae,
    ModelKind::LogReg,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TunedConfig,
    /// Validation loss at the restored epoch (BCE, or MSE for the autoencoder).
    pub validation_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub model: ModelKind,
    pub best: TunedConfig,
    pub best_index: usize,
    pub best_validation_loss: f64,
    pub trials: Vec<Trial>,
}

fn run_trial(
    config: &TunedConfig,
    hp: &Hyperparameters,
    data: TrainData<'_>,
    rng: &RngStream,
) -> Result<f64> {
    let TrainData {
        x_train,
        y_train,
        x_val,
        y_val,
    } = data;
    Ok(match config {
        TunedConfig::Nn(p) | TunedConfig::McDropout(p) => {
            train_mlp(
                &hp.train_config(p.learning_rate),
                &p.arch(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?
            .1
            .best_val_loss
        }
        TunedConfig::Bbb(p) => {
            train_bbb(
                &hp.train_config(p.learning_rate),
                &p.config(),
                x_train,
                y_train,
                x_val,
                y_val,
                rng,
            )?
            .1
            .best_val_loss
        }
        TunedConfig::Ae(p) => {
            train_autoencoder(
                &hp.train_config(p.learning_rate),
                &p.config(),
                x_train,
                x_val,
                rng,
            )?
            .1
            .best_val_loss
        }
        TunedConfig::LogReg { c } => train_logreg(x_train, y_train, *c)?.mean_bce(x_val, y_val)?,
    })
}

/// Samples `budget` configurations (logistic regression: every grid value),
/// trains each, and keeps the lowest validation loss; ties go to the
/// earlier trial. Trials run concurrently on independent streams.
pub fn random_search(
    space: &SearchSpace,
    kind: ModelKind,
    budget: usize,
    base: &Hyperparameters,
    data: TrainData<'_>,
    rng: &RngStream,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::InvalidConfig("search budget must be >= 1".into()));
    }
    let configs: Vec<TunedConfig> = if kind == ModelKind::LogReg {
        match &space.logreg_c {
            Rule::Categorical { options } => {
                options.iter().map(|&c| TunedConfig::LogReg { c }).collect()
            }
            _ => (0..budget)
                .map(|i| space.sample(kind, &mut rng.child("sample", i as u64)))
                .collect::<Result<_>>()?,
        }
    } else {
        (0..budget)
            .map(|i| space.sample(kind, &mut rng.child("sample", i as u64)))
            .collect::<Result<_>>()?
    };

    let trials: Vec<Trial> = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, config)| {
            let res = run_trial(&config, base, data, &rng.child("trial", index as u64));
            match res {
                Ok(loss) if loss.is_finite() => Ok(Trial {
                    index,
                    config,
                    validation_loss: Some(loss),
                    error: None,
                }),
                Ok(_) => Ok(Trial {
                    index,
                    config,
                    validation_loss: None,
                    error: Some("non-finite validation loss".into()),
                }),
                Err(e @ Error::NonFinite(_)) => Ok(Trial {
                    index,
                    config,
                    validation_loss: None,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let best = trials
        .iter()
        .filter_map(|t| t.validation_loss.map(|l| (t.index, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let Some((best_index, best_validation_loss)) = best else {
        return Err(Error::AllTrialsDiverged(
            trials.iter().map(|t| t.index).collect(),
        ));
    };
    Ok(SearchOutcome {
        model: kind,
        best: trials[best_index].config.clone(),
        best_index,
        best_validation_loss,
        trials,
    })
}
