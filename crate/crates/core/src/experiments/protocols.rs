//! Mortality evaluation and the three OOD-detection protocols.
//!
//! Scoring uses common random numbers: a model draws its stochastic
//! predictions for the ID set and for the OOD set from copies of the same
//! stream, so identical inputs always receive identical scores.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use super::registry::{labels_as_f64, train_registry, Registry, TrainData, ORACLE_NAME};
use super::report::{
    Accumulator, ExperimentKind, ExperimentReport, GroupSummary, MORTALITY_METRIC,
};
use crate::data::{
    fit_scaler, perturb_feature, split_dataset, Dataset, DatasetSplit, FeatureMatrix, ScalerStats,
    DEFAULT_RATIOS,
};
use crate::error::{Error, Result};
use crate::evaluation::{auc_roc, ood_auc, significant_feature_fraction};
use crate::metrics::MetricKind;
use crate::models::TrainedModel;
use crate::numerics::RngStream;

pub const DEFAULT_FACTORS: [f64; 4] = [10.0, 100.0, 1000.0, 10000.0];
pub const DEFAULT_RUNS: usize = 5;
pub const SIGNIFICANCE_ALPHA: f64 = 0.01;

/// Scaled train/validation/test data for one split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scaler: ScalerStats,
    pub x_train: DMatrix<f64>,
    pub y_train: Vec<f64>,
    pub x_val: DMatrix<f64>,
    pub y_val: Vec<f64>,
    pub test: FeatureMatrix,
    pub y_test: Vec<u8>,
}

impl Prepared {
    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            x_train: &self.x_train,
            y_train: &self.y_train,
            x_val: &self.x_val,
            y_val: &self.y_val,
        }
    }
}

/// Fits the scaler on the training rows and scales all three parts.
pub fn prepare(dataset: &Dataset, split: &DatasetSplit) -> Result<Prepared> {
    let scaler = fit_scaler(&dataset.features, &split.train)?;
    let part = |rows: &[usize]| -> Result<(FeatureMatrix, Vec<u8>)> {
        let x = scaler.apply(&dataset.features.select_rows(rows))?;
        Ok((x, rows.iter().map(|&i| dataset.labels[i]).collect()))
    };
    let (train, y_train) = part(&split.train)?;
    let (val, y_val) = part(&split.validation)?;
    let (test, y_test) = part(&split.test)?;
    Ok(Prepared {
        scaler,
        x_train: train.values,
        y_train: labels_as_f64(&y_train),
        x_val: val.values,
        y_val: labels_as_f64(&y_val),
        test,
        y_test,
    })
}

type ModelScores = Vec<(String, MetricKind, Vec<f64>)>;

/// Every (model, metric) score vector for `x`. Model `i` draws from
/// `rng.child("score", i)`.
pub fn score_models(
    models: &[TrainedModel],
    x: &DMatrix<f64>,
    k: usize,
    rng: &RngStream,
) -> Result<ModelScores> {
    let per_model: Vec<ModelScores> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut stream = rng.child("score", i as u64);
            let scores = m.uncertainty(x, k, &mut stream)?;
            Ok(m.kind()
                .metrics()
                .iter()
                .zip(scores)
                .map(|(&metric, s)| (m.kind().name().to_string(), metric, s.values))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_model.into_iter().flatten().collect())
}

fn push_ood(
    acc: &mut Accumulator,
    id: &ModelScores,
    ood: &ModelScores,
    label: &str,
    oracle: bool,
    n_id: usize,
    n_ood: usize,
) -> Result<()> {
    for ((model, metric, a), (_, _, b)) in id.iter().zip(ood) {
        acc.push(model, metric.name(), label, ood_auc(a, b)?);
    }
    if oracle {
        acc.push(
            ORACLE_NAME,
            MetricKind::Novelty.name(),
            label,
            ood_auc(&vec![0.0; n_id], &vec![1.0; n_ood])?,
        );
    }
    Ok(())
}

fn push_mortality(
    acc: &mut Accumulator,
    models: &[TrainedModel],
    x: &DMatrix<f64>,
    y: &[u8],
    label: &str,
    k: usize,
    rng: &RngStream,
) -> Result<()> {
    let both = y.contains(&0) && y.contains(&1);
    if !both {
        return Ok(());
    }
    for (i, m) in models.iter().enumerate() {
        if m.kind().is_density() {
            continue;
        }
        let p = m.mortality_score(x, k, &mut rng.child("mortality", i as u64))?;
        acc.push(m.kind().name(), MORTALITY_METRIC, label, auc_roc(&p, y)?);
    }
    Ok(())
}

fn rows_complement(n: usize, excluded: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    excluded.iter().for_each(|&i| mask[i] = true);
    (0..n).filter(|&i| !mask[i]).collect()
}

/// Splits the given rows (positions into the dataset) 70/15/15.
fn split_rows(rows: &[usize], rng: &RngStream) -> Result<DatasetSplit> {
    let s = split_dataset(rows.len(), DEFAULT_RATIOS, &mut rng.child("split", 0))?;
    let map = |v: Vec<usize>| v.into_iter().map(|i| rows[i]).collect();
    Ok(DatasetSplit {
        train: map(s.train),
        validation: map(s.validation),
        test: map(s.test),
    })
}

/// Test-set mortality AUC of every discriminator over `n_runs` training
/// seeds on a fixed split.
pub fn evaluate_mortality(
    registry: &Registry,
    dataset: &Dataset,
    split: &DatasetSplit,
    n_runs: usize,
    rng: &RngStream,
) -> Result<ExperimentReport> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
    }
    let prepared = prepare(dataset, split)?;
    let disc = Registry {
        models: registry.discriminators(),
        ..registry.clone()
    };
    let k = registry.hyperparameters.n_members;
    let mut acc = Accumulator::default();
    let mut seeds = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let run_rng = rng.child("run", run as u64);
        seeds.push(run_rng.key());
        let models = train_registry(&disc, prepared.train_data(), &run_rng.child("models", 0))?;
        push_mortality(
            &mut acc,
            &models,
            &prepared.test.values,
            &prepared.y_test,
            "test",
            k,
            &run_rng,
        )?;
    }
    Ok(ExperimentReport {
        experiment: ExperimentKind::Mortality,
        master_seed: rng.master_seed,
        n_runs,
        run_seeds: seeds,
        config: json!({ "registry": disc, "split_sizes": [split.train.len(), split.validation.len(), split.test.len()] }),
        ood_auc: Vec::new(),
        mortality_auc: acc.into_entries(),
        groups: Vec::new(),
    })
}

pub fn factor_label(factor: f64) -> String {
    format!("{factor}")
}

/// Scales `repeats` distinct columns of the (scaled) test set by each
/// factor and reports, per (model, metric, factor), the mean OOD AUC of the
/// corrupted copy against the original. `x_test` is not modified.
pub fn perturbation_experiment(
    models: &[TrainedModel],
    x_test: &FeatureMatrix,
    factors: &[f64],
    repeats: usize,
    k: usize,
    inject_oracle: bool,
    rng: &RngStream,
) -> Result<ExperimentReport> {
    let d = x_test.n_cols();
    if repeats == 0 || repeats > d {
        return Err(Error::InvalidConfig(format!(
            "repeats must be in 1..={d}, got {repeats}"
        )));
    }
    if factors.iter().any(|f| !(*f > 0.0)) || factors.is_empty() {
        return Err(Error::InvalidConfig("factors must be positive".into()));
    }
    let score_rng = rng.child("scoring", 0);
    let original = score_models(models, &x_test.values, k, &score_rng)?;
    let units: Vec<(usize, usize)> = factors
        .iter()
        .enumerate()
        .flat_map(|(fi, _)| {
            let cols = rng
                .child("columns", fi as u64)
                .sample_without_replacement(d, repeats);
            cols.into_iter().map(move |c| (fi, c))
        })
        .collect();
    let scored: Vec<ModelScores> = units
        .par_iter()
        .map(|&(fi, col)| {
            let corrupted = perturb_feature(x_test, col, factors[fi])?;
            score_models(models, &corrupted.values, k, &score_rng)
        })
        .collect::<Result<_>>()?;
    let mut acc = Accumulator::default();
    let n = x_test.n_rows();
    for (&(fi, _), s) in units.iter().zip(&scored) {
        push_ood(
            &mut acc,
            &original,
            s,
            &factor_label(factors[fi]),
            inject_oracle,
            n,
            n,
        )?;
    }
    let columns: Vec<Vec<usize>> = (0..factors.len())
        .map(|fi| units.iter().filter(|u| u.0 == fi).map(|u| u.1).collect())
        .collect();
    Ok(ExperimentReport {
        experiment: ExperimentKind::Perturbation,
        master_seed: rng.master_seed,
        n_runs: 1,
        run_seeds: vec![rng.key()],
        config: json!({
            "models": models.iter().map(|m| m.kind().name()).collect::<Vec<_>>(),
            "factors": factors,
            "repeats": repeats,
            "samples": k,
            "columns": columns,
        }),
        ood_auc: acc.into_entries(),
        mortality_auc: Vec::new(),
        groups: Vec::new(),
    })
}

/// Trains the registry on `split` and runs [`perturbation_experiment`] on
/// its test part.
pub fn run_perturbation(
    registry: &Registry,
    dataset: &Dataset,
    split: &DatasetSplit,
    factors: &[f64],
    repeats: usize,
    rng: &RngStream,
) -> Result<ExperimentReport> {
    let prepared = prepare(dataset, split)?;
    let models = train_registry(registry, prepared.train_data(), &rng.child("models", 0))?;
    let mut report = perturbation_experiment(
        &models,
        &prepared.test,
        factors,
        repeats,
        registry.hyperparameters.n_members,
        registry.inject_oracle,
        rng,
    )?;
    report.config["registry"] = serde_json::to_value(registry)?;
    Ok(report)
}

/// Removes each group from training, then compares uncertainty on held-out
/// ID test rows with uncertainty on the group. Every run re-splits the
/// remaining rows.
pub fn group_holdout_experiment(
    dataset: &Dataset,
    registry: &Registry,
    tags: &[String],
    n_runs: usize,
    rng: &RngStream,
) -> Result<ExperimentReport> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
    }
    let n = dataset.n_rows();
    let k = registry.hyperparameters.n_members;
    let mut ood = Accumulator::default();
    let mut mort = Accumulator::default();
    let mut groups = Vec::with_capacity(tags.len());
    let mut seeds = Vec::new();
    for tag in tags {
        let g_rows = dataset.rows_in_group(tag);
        if g_rows.is_empty() {
            return Err(Error::InvalidConfig(format!("group `{tag}` has no rows")));
        }
        let rest = rows_complement(n, &g_rows);
        let g_raw = dataset.features.select_rows(&g_rows);
        groups.push(GroupSummary {
            group: tag.clone(),
            relative_size: g_rows.len() as f64 / n as f64,
            significant_feature_fraction: significant_feature_fraction(
                &dataset.features.select_rows(&rest),
                &g_raw,
                SIGNIFICANCE_ALPHA,
            )?,
        });
        let g_labels: Vec<u8> = g_rows.iter().map(|&i| dataset.labels[i]).collect();
        for run in 0..n_runs {
            let unit = rng
                .child("run", run as u64)
                .child(&format!("group:{tag}"), 0);
            seeds.push(unit.key());
            let split = split_rows(&rest, &unit)?;
            let prepared = prepare(dataset, &split)?;
            let models = train_registry(registry, prepared.train_data(), &unit.child("models", 0))?;
            let x_group = prepared.scaler.apply(&g_raw)?.values;
            let score_rng = unit.child("scoring", 0);
            let id_scores = score_models(&models, &prepared.test.values, k, &score_rng)?;
            let g_scores = score_models(&models, &x_group, k, &score_rng)?;
            push_ood(
                &mut ood,
                &id_scores,
                &g_scores,
                tag,
                registry.inject_oracle,
                prepared.test.n_rows(),
                g_rows.len(),
            )?;
            push_mortality(&mut mort, &models, &x_group, &g_labels, tag, k, &unit)?;
        }
    }
    Ok(ExperimentReport {
        experiment: ExperimentKind::GroupHoldout,
        master_seed: rng.master_seed,
        n_runs,
        run_seeds: seeds,
        config: json!({ "registry": registry, "groups": tags }),
        ood_auc: ood.into_entries(),
        mortality_auc: mort.into_entries(),
        groups,
    })
}

/// Trains on one dataset and treats the whole other dataset as OOD, in
/// both directions. Scalers are fitted on the source training rows only.
pub fn cross_dataset_experiment(
    a: (&str, &Dataset),
    b: (&str, &Dataset),
    registry: &Registry,
    n_runs: usize,
    rng: &RngStream,
) -> Result<ExperimentReport> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
    }
    if !a.1.features.same_schema(&b.1.features) {
        return Err(Error::Schema(format!(
            "datasets `{}` and `{}` have different feature columns",
            a.0, b.0
        )));
    }
    let k = registry.hyperparameters.n_members;
    let mut ood = Accumulator::default();
    let mut mort = Accumulator::default();
    let mut groups = Vec::new();
    let mut seeds = Vec::new();
    for (src, tgt) in [(a, b), (b, a)] {
        let label = format!("{}->{}", src.0, tgt.0);
        let (s, t) = (src.1, tgt.1);
        groups.push(GroupSummary {
            group: label.clone(),
            relative_size: t.n_rows() as f64 / (s.n_rows() + t.n_rows()) as f64,
            significant_feature_fraction: significant_feature_fraction(
                &s.features,
                &t.features,
                SIGNIFICANCE_ALPHA,
            )?,
        });
        let all: Vec<usize> = (0..s.n_rows()).collect();
        for run in 0..n_runs {
            let unit = rng.child("run", run as u64).child(&label, 0);
            seeds.push(unit.key());
            let split = split_rows(&all, &unit)?;
            let prepared = prepare(s, &split)?;
            let models = train_registry(registry, prepared.train_data(), &unit.child("models", 0))?;
            let x_target = prepared.scaler.apply(&t.features)?.values;
            let score_rng = unit.child("scoring", 0);
            let id_scores = score_models(&models, &prepared.test.values, k, &score_rng)?;
            let t_scores = score_models(&models, &x_target, k, &score_rng)?;
            push_ood(
                &mut ood,
                &id_scores,
                &t_scores,
                &label,
                registry.inject_oracle,
                prepared.test.n_rows(),
                t.n_rows(),
            )?;
            push_mortality(&mut mort, &models, &x_target, &t.labels, &label, k, &unit)?;
        }
    }
    Ok(ExperimentReport {
        experiment: ExperimentKind::CrossDataset,
        master_seed: rng.master_seed,
        n_runs,
        run_seeds: seeds,
        config: json!({ "registry": registry, "datasets": [a.0, b.0] }),
        ood_auc: ood.into_entries(),
        mortality_auc: mort.into_entries(),
        groups,
    })
}
