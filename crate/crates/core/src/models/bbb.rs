//! Bayes-by-Backprop: factorized Gaussian posterior over every weight and
//! bias, scale-mixture Gaussian prior, reparameterized single-sample ELBO.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpArchitecture, MlpClassifier};
use super::network::{flatten_grads, Dropout, Network};
use super::train::{fit, BatchContext, TrainConfig, Trainable, TrainingTrace};
use crate::error::{Error, Result};
use crate::numerics::{bce_with_logit, log_sum_exp, sigmoid, softplus, RngStream};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// p(w) = π·N(0, σ₁²) + (1 − π)·N(0, σ₂²), per weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub pi: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

fn ln_normal(w: f64, sigma: f64) -> f64 {
    -LN_SQRT_2PI - sigma.ln() - 0.5 * (w / sigma) * (w / sigma)
}

impl MixturePrior {
    pub fn new(pi: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0) || !(0.0..=1.0).contains(&pi) {
            return Err(Error::InvalidConfig(format!(
                "mixture prior needs sigmas > 0 and pi in [0,1] (pi={pi}, s1={sigma1}, s2={sigma2})"
            )));
        }
        Ok(MixturePrior { pi, sigma1, sigma2 })
    }

    fn component_logs(&self, w: f64) -> [f64; 2] {
        let a = if self.pi > 0.0 {
            self.pi.ln() + ln_normal(w, self.sigma1)
        } else {
            f64::NEG_INFINITY
        };
        let b = if self.pi < 1.0 {
            (1.0 - self.pi).ln() + ln_normal(w, self.sigma2)
        } else {
            f64::NEG_INFINITY
        };
        [a, b]
    }

    pub fn log_density(&self, w: f64) -> f64 {
        log_sum_exp(&self.component_logs(w))
    }

    /// d/dw ln p(w).
    pub fn d_log_density(&self, w: f64) -> f64 {
        let [a, b] = self.component_logs(w);
        let total = log_sum_exp(&[a, b]);
        let r1 = (a - total).exp();
        let r2 = (b - total).exp();
        -w * (r1 / (self.sigma1 * self.sigma1) + r2 / (self.sigma2 * self.sigma2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbbConfig {
    pub arch: MlpArchitecture,
    pub posterior_mu_init: f64,
    pub posterior_rho_init: f64,
    pub prior: MixturePrior,
}

impl Default for BbbConfig {
    fn default() -> Self {
        BbbConfig {
            arch: MlpArchitecture {
                hidden_sizes: vec![25, 25, 25],
                dropout_rate: 0.177_533,
            },
            // Centred means: a shared positive offset over hundreds of inputs
            // saturates the first layer before training starts.
            posterior_mu_init: 0.0,
            posterior_rho_init: -5.982_621,
            prior: MixturePrior {
                pi: 0.233_419,
                sigma1: 0.740_818,
                sigma2: 0.606_531,
            },
        }
    }
}

/// Variational parameters: `mu` holds the posterior means (and the layer
/// layout); `rho` the spread parameters in the same flat order, with
/// σ = softplus(ρ).
#[derive(Debug, Clone, PartialEq)]
pub struct BbbModel {
    pub mu: Network,
    pub rho: Vec<f64>,
    pub prior: MixturePrior,
}

impl BbbModel {
    /// Posterior means ~ N(mu_init, 0.1²), spreads ρ ~ N(rho_init, 0.1²).
    pub fn new(config: &BbbConfig, input_dim: usize, rng: &mut RngStream) -> Result<BbbModel> {
        config.arch.validate()?;
        MixturePrior::new(config.prior.pi, config.prior.sigma1, config.prior.sigma2)?;
        let mut mu = Network::new(
            &config.arch.layer_sizes(input_dim),
            None,
            config.arch.dropout_rate,
            rng,
        )?;
        let n = mu.n_params();
        let means: Vec<f64> = (0..n)
            .map(|_| config.posterior_mu_init + 0.1 * rng.normal())
            .collect();
        mu.set_flat_params(&means);
        let rho = (0..n)
            .map(|_| config.posterior_rho_init + 0.1 * rng.normal())
            .collect();
        Ok(BbbModel {
            mu,
            rho,
            prior: config.prior,
        })
    }

    pub fn n_weights(&self) -> usize {
        self.rho.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mu.input_dim()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// Network with weights μ + softplus(ρ)·ε.
    pub fn sample_network(&self, eps: &[f64]) -> Network {
        let mu = self.mu.flat_params();
        let w: Vec<f64> = mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((m, r), e)| m + softplus(*r) * e)
            .collect();
        let mut net = self.mu.clone();
        net.set_flat_params(&w);
        net
    }

    /// log q(w|μ,ρ) − log p(w) for the weights implied by `eps`.
    pub fn complexity(&self, eps: &[f64]) -> Result<f64> {
        let mu = self.mu.flat_params();
        let mut total = 0.0;
        for i in 0..eps.len() {
            let sigma = softplus(self.rho[i]);
            let w = mu[i] + sigma * eps[i];
            let log_q = -LN_SQRT_2PI - sigma.ln() - 0.5 * eps[i] * eps[i];
            let log_p = self.prior.log_density(w);
            if !log_p.is_finite() {
                return Err(Error::NonFinite(format!(
                    "prior log density at weight {i} (w={w})"
                )));
            }
            total += log_q - log_p;
        }
        Ok(total)
    }

    /// Minibatch loss `(log q − log p) / n_batches + Σ BCE` for frozen noise
    /// `eps`, with its gradient over `[μ..., ρ...]`.
    pub fn bbb_loss(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        n_batches: usize,
        eps: &[f64],
        dropout: Dropout<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        if n_batches == 0 {
            return Err(Error::InvalidConfig("n_batches must be >= 1".into()));
        }
        let kl_weight = 1.0 / n_batches as f64;
        let net = self.sample_network(eps);
        let cache = net.forward(x, dropout)?;
        let mut nll = 0.0;
        let delta = DMatrix::from_fn(x.nrows(), 1, |i, _| {
            let z = cache.output[(i, 0)];
            nll += bce_with_logit(z, y[i]);
            sigmoid(z) - y[i]
        });
        let g_w = flatten_grads(&net.backward(&cache, delta));
        let complexity = self.complexity(eps)?;

        let mu = self.mu.flat_params();
        let n = eps.len();
        let mut grad = vec![0.0; 2 * n];
        for i in 0..n {
            let sigma = softplus(self.rho[i]);
            let w = mu[i] + sigma * eps[i];
            // through w: data term, −log p, and log q's explicit w-dependence
            let dw = g_w[i] + kl_weight * (-eps[i] / sigma - self.prior.d_log_density(w));
            // explicit dependence of log q on μ and σ
            let dmu = dw + kl_weight * (eps[i] / sigma);
            let dsigma = dw * eps[i] + kl_weight * (-1.0 / sigma + eps[i] * eps[i] / sigma);
            grad[i] = dmu;
            grad[n + i] = dsigma * sigmoid(self.rho[i]);
        }
        Ok((kl_weight * complexity + nll, grad))
    }

    pub fn draw_noise(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..self.n_weights()).map(|_| rng.normal()).collect()
    }

    /// Probabilities under the posterior mean weights.
    pub fn predict_proba_mean(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .mu
            .output(x)?
            .column(0)
            .iter()
            .map(|&z| sigmoid(z))
            .collect())
    }

    /// Probabilities under one weight draw from the posterior.
    pub fn predict_proba_sample(&self, x: &DMatrix<f64>, rng: &mut RngStream) -> Result<Vec<f64>> {
        let eps = self.draw_noise(rng);
        let out = self.sample_network(&eps).output(x)?;
        Ok(out.column(0).iter().map(|&z| sigmoid(z)).collect())
    }
}

impl Trainable for BbbModel {
    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mu.flat_params();
        p.extend_from_slice(&self.rho);
        p
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let n = self.rho.len();
        self.mu.set_flat_params(&flat[..n]);
        self.rho.copy_from_slice(&flat[n..]);
    }

    fn batch_loss_grad(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        ctx: BatchContext,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>)> {
        let eps = self.draw_noise(rng);
        self.bbb_loss(x, y, ctx.n_batches, &eps, Dropout::Sample(rng))
    }

    fn validation_loss(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        MlpClassifier {
            net: self.mu.clone(),
        }
        .mean_bce(x, y)
    }
}

pub fn train_bbb(
    config: &TrainConfig,
    bbb: &BbbConfig,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    rng: &RngStream,
) -> Result<(BbbModel, TrainingTrace)> {
    let mut model = BbbModel::new(bbb, x_train.ncols(), &mut rng.child("init", 0))?;
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
