//! Deep ensembles: plain, bootstrapped and anchored.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpArchitecture, MlpClassifier};
use super::network::{Dropout, Network};
use super::train::{fit, BatchContext, TrainConfig, Trainable, TrainingTrace};
use crate::error::{Error, Result};
use crate::metrics::PredictionEnsemble;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Plain,
    Bootstrapped,
    Anchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub kind: EnsembleKind,
    pub n_members: usize,
    pub arch: MlpArchitecture,
    /// Multiplier on the anchored penalty; 1 is the standard prior.
    #[serde(default = "one")]
    pub penalty_scale: f64,
    /// Give every member the same random stream (test hook).
    #[serde(default)]
    pub shared_member_seed: bool,
}

fn one() -> f64 {
    1.0
}

/// Per-parameter prior scale λ = √(2 / fan_in) of the owning layer.
pub fn anchor_scales(net: &Network) -> Vec<f64> {
    let mut out = vec![0.0; net.n_params()];
    for (offset, len, fan_in) in net.param_groups() {
        let lambda = (2.0 / fan_in as f64).sqrt();
        out[offset..offset + len]
            .iter_mut()
            .for_each(|v| *v = lambda);
    }
    out
}

/// Σ (θ − θ_anchor)² / (2 λ² N_train), with λ given per parameter.
pub fn anchored_penalty(
    params: &[f64],
    anchors: &[f64],
    lambdas: &[f64],
    n_train: usize,
) -> Result<f64> {
    if params.len() != anchors.len() || params.len() != lambdas.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: anchors.len().min(lambdas.len()),
        });
    }
    let n = n_train as f64;
    Ok(params
        .iter()
        .zip(anchors)
        .zip(lambdas)
        .map(|((p, a), l)| (p - a) * (p - a) / (2.0 * l * l * n))
        .sum())
}

fn anchored_penalty_grad(
    params: &[f64],
    anchors: &[f64],
    lambdas: &[f64],
    n_train: usize,
) -> Vec<f64> {
    let n = n_train as f64;
    params
        .iter()
        .zip(anchors)
        .zip(lambdas)
        .map(|((p, a), l)| (p - a) / (l * l * n))
        .collect()
}

/// Member network trained with the anchored penalty added to its loss.
struct AnchoredMember<'a> {
    model: MlpClassifier,
    anchors: &'a [f64],
    lambdas: &'a [f64],
    scale: f64,
}

impl Trainable for AnchoredMember<'_> {
    fn flat_params(&self) -> Vec<f64> {
        self.model.flat_params()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        self.model.set_flat_params(flat)
    }

    fn batch_loss_grad(
        &self,
        x: &DMatrix<f64>,
        y: &[f64],
        ctx: BatchContext,
        rng: &mut RngStream,
    ) -> Result<(f64, Vec<f64>)> {
        let (loss, mut grad) = self.model.loss_and_grad(x, y, Dropout::Sample(rng))?;
        if self.scale == 0.0 {
            return Ok((loss, grad));
        }
        let theta = self.model.flat_params();
        let pen = anchored_penalty(&theta, self.anchors, self.lambdas, ctx.n_train)?;
        let pg = anchored_penalty_grad(&theta, self.anchors, self.lambdas, ctx.n_train);
        grad.iter_mut()
            .zip(pg)
            .for_each(|(g, p)| *g += self.scale * p);
        Ok((loss + self.scale * pen, grad))
    }

    fn validation_loss(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        self.model.mean_bce(x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub members: Vec<MlpClassifier>,
    /// One anchor vector per member (anchored ensembles only).
    pub anchors: Vec<Vec<f64>>,
    pub penalty_scale: f64,
}

impl EnsembleModel {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    /// One row of probabilities per member.
    pub fn predict_members(&self, x: &DMatrix<f64>) -> Result<PredictionEnsemble> {
        let rows = self
            .members
            .iter()
            .map(|m| m.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        PredictionEnsemble::from_rows(rows)
    }
}

/// Uniform with-replacement resample of `0..n`, size `n`.
pub fn bootstrap_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..n).map(|_| rng.below(n)).collect()
}

fn member_stream(config: &EnsembleConfig, rng: &RngStream, k: usize) -> RngStream {
    rng.child(
        "member",
        if config.shared_member_seed {
            0
        } else {
            k as u64
        },
    )
}

pub fn train_ensemble(
    config: &EnsembleConfig,
    train: &TrainConfig,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    rng: &RngStream,
) -> Result<(EnsembleModel, Vec<TrainingTrace>)> {
    if config.n_members == 0 {
        return Err(Error::InvalidConfig(
            "ensemble needs at least one member".into(),
        ));
    }
    if !(config.penalty_scale >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "penalty scale {} must be >= 0",
            config.penalty_scale
        )));
    }
    config.arch.validate()?;
    let trained: Vec<(MlpClassifier, Vec<f64>, TrainingTrace)> = (0..config.n_members)
        .into_par_iter()
        .map(|k| {
            let stream = member_stream(config, rng, k);
            let model =
                MlpClassifier::new(&config.arch, x_train.ncols(), &mut stream.child("init", 0))?;
            let mut batches = stream.child("batches", 0);
            match config.kind {
                EnsembleKind::Plain => {
                    let mut model = model;
                    let trace = fit(
                        &mut model,
                        train,
                        x_train,
                        y_train,
                        x_val,
                        y_val,
                        &mut batches,
                    )?;
                    Ok((model, Vec::new(), trace))
                }
                EnsembleKind::Bootstrapped => {
                    let idx = bootstrap_indices(x_train.nrows(), &mut stream.child("bootstrap", 0));
                    let xb = x_train.select_rows(&idx);
                    let yb: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
                    let mut model = model;
                    let trace = fit(&mut model, train, &xb, &yb, x_val, y_val, &mut batches)?;
                    Ok((model, Vec::new(), trace))
                }
                EnsembleKind::Anchored => {
                    let lambdas = anchor_scales(&model.net);
                    let mut anchor_rng = stream.child("anchor", 0);
                    let anchors: Vec<f64> =
                        lambdas.iter().map(|l| l * anchor_rng.normal()).collect();
                    let mut member = AnchoredMember {
                        model,
                        anchors: &anchors,
                        lambdas: &lambdas,
                        scale: config.penalty_scale,
                    };
                    let trace = fit(
                        &mut member,
                        train,
                        x_train,
                        y_train,
                        x_val,
                        y_val,
                        &mut batches,
                    )?;
                    Ok((member.model, anchors, trace))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut members = Vec::with_capacity(trained.len());
    let mut anchors = Vec::new();
    let mut traces = Vec::with_capacity(trained.len());
    for (m, a, t) in trained {
        members.push(m);
        if config.kind == EnsembleKind::Anchored {
            anchors.push(a);
        }
        traces.push(t);
    }
    Ok((
        EnsembleModel {
            kind: config.kind,
            members,
            anchors,
            penalty_scale: config.penalty_scale,
        },
        traces,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::class1_std;
    use crate::models::mlp::tests::two_clusters;

    fn config(kind: EnsembleKind, n: usize) -> EnsembleConfig {
        EnsembleConfig {
            kind,
            n_members: n,
            arch: MlpArchitecture {
                hidden_sizes: vec![6],
                dropout_rate: 0.1,
            },
            penalty_scale: 1.0,
            shared_member_seed: false,
        }
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(
            anchored_penalty(&[0.3, -1.0], &[0.3, -1.0], &[1.0, 1.0], 5).unwrap(),
            0.0
        );
        let v = anchored_penalty(&[1.0], &[0.0], &[2f64.sqrt()], 1).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        let a = anchored_penalty(&[1.0, 2.0], &[0.0, 0.5], &[0.7, 1.3], 10).unwrap();
        let b = anchored_penalty(&[1.0, 2.0], &[0.0, 0.5], &[0.7, 1.3], 20).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
    }

    #[test]
    fn anchored_loss_is_plain_loss_plus_penalty() {
        let mut rng = RngStream::new(0, "anch", 0);
        let model =
            MlpClassifier::new(&config(EnsembleKind::Anchored, 1).arch, 2, &mut rng).unwrap();
        let lambdas = anchor_scales(&model.net);
        let anchors: Vec<f64> = lambdas.iter().map(|l| l * rng.normal()).collect();
        let member = AnchoredMember {
            model: model.clone(),
            anchors: &anchors,
            lambdas: &lambdas,
            scale: 1.0,
        };
        let (x, y) = two_clusters(10, 3);
        let ctx = BatchContext {
            n_batches: 1,
            n_train: 10,
        };
        let (anchored, grad) = member
            .batch_loss_grad(&x, &y, ctx, &mut RngStream::new(1, "d", 0))
            .unwrap();
        let (plain, _) = model
            .loss_and_grad(&x, &y, Dropout::Sample(&mut RngStream::new(1, "d", 0)))
            .unwrap();
        let pen = anchored_penalty(&model.flat_params(), &anchors, &lambdas, 10).unwrap();
        assert_eq!(anchored, plain + pen);

        // gradient with a frozen (absent) dropout mask
        let no_drop = AnchoredMember {
            model: MlpClassifier {
                net: Network {
                    dropout_rate: 0.0,
                    ..model.net.clone()
                },
            },
            ..member
        };
        let theta = no_drop.flat_params();
        let (_, g) = no_drop
            .batch_loss_grad(&x, &y, ctx, &mut RngStream::new(1, "d", 0))
            .unwrap();
        let mut probe = no_drop;
        let res = crate::numerics::check_gradient(
            |t| {
                probe.set_flat_params(t);
                probe
                    .batch_loss_grad(&x, &y, ctx, &mut RngStream::new(1, "d", 0))
                    .unwrap()
                    .0
            },
            &theta,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(res.max_relative_error < 1e-4, "{res:?}");
        assert_eq!(grad.len(), theta.len());
    }

    #[test]
    fn shared_seeds_give_identical_members() {
        let (x, y) = two_clusters(80, 1);
        let mut cfg = config(EnsembleKind::Plain, 3);
        cfg.shared_member_seed = true;
        let (ens, _) = train_ensemble(
            &cfg,
            &train_cfg(),
            &x,
            &y,
            &x,
            &y,
            &RngStream::new(4, "e", 0),
        )
        .unwrap();
        assert!(ens.members.windows(2).all(|w| w[0] == w[1]));
        let preds = ens.predict_members(&x).unwrap();
        assert!(class1_std(&preds).values.iter().all(|&s| s < 1e-15));
    }

    #[test]
    fn bootstrap_unique_fraction_is_near_one_minus_inverse_e() {
        let mut rng = RngStream::new(9, "boot", 0);
        let mut fracs = Vec::new();
        for _ in 0..20 {
            let idx = bootstrap_indices(1000, &mut rng);
            let unique: std::collections::BTreeSet<_> = idx.into_iter().collect();
            fracs.push(unique.len() as f64 / 1000.0);
        }
        let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
        assert!((mean - (1.0 - (-1f64).exp())).abs() < 0.03, "{mean}");
    }

    #[test]
    fn zero_penalty_anchored_matches_plain() {
        let (x, y) = two_clusters(60, 2);
        let (xv, yv) = two_clusters(20, 3);
        let rng = RngStream::new(5, "e", 0);
        let (plain, tp) = train_ensemble(
            &config(EnsembleKind::Plain, 2),
            &train_cfg(),
            &x,
            &y,
            &xv,
            &yv,
            &rng,
        )
        .unwrap();
        let mut cfg = config(EnsembleKind::Anchored, 2);
        cfg.penalty_scale = 0.0;
        let (anch, ta) = train_ensemble(&cfg, &train_cfg(), &x, &y, &xv, &yv, &rng).unwrap();
        assert_eq!(plain.members, anch.members);
        assert_eq!(tp, ta);
        assert_eq!(anch.anchors.len(), 2);
    }

    #[test]
    fn single_member_ensemble_equals_member_prediction() {
        let (x, y) = two_clusters(40, 7);
        let (ens, _) = train_ensemble(
            &config(EnsembleKind::Bootstrapped, 1),
            &train_cfg(),
            &x,
            &y,
            &x,
            &y,
            &RngStream::new(1, "e", 0),
        )
        .unwrap();
        let preds = ens.predict_members(&x).unwrap();
        assert_eq!(preds.k(), 1);
        let direct = ens.members[0].predict_proba(&x).unwrap();
        assert_eq!(
            preds.probs().row(0).iter().copied().collect::<Vec<_>>(),
            direct
        );
    }
}
