//! Uncertainty and novelty scores. Every score is oriented so that larger
//! means less confident / more novel.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K×N positive-class probabilities from K stochastic predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEnsemble {
    probs: DMatrix<f64>,
}

impl PredictionEnsemble {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 {
            return Err(Error::InvalidConfig(
                "prediction ensemble needs K >= 1".into(),
            ));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidConfig(format!(
                "probability {p} outside [0,1]"
            )));
        }
        Ok(PredictionEnsemble { probs })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("ragged prediction rows".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(k, n, &flat))
    }

    pub fn single(probs: Vec<f64>) -> Result<Self> {
        Self::from_rows(vec![probs])
    }

    pub fn k(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.k() as f64;
        self.probs.column_iter().map(|c| c.sum() / k).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MaxProb,
    Entropy,
    Std,
    MutualInformation,
    Novelty,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::MaxProb => "max_prob",
            MetricKind::Entropy => "entropy",
            MetricKind::Std => "std",
            MetricKind::MutualInformation => "mutual_information",
            MetricKind::Novelty => "novelty",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "max_prob" => MetricKind::MaxProb,
            "entropy" => MetricKind::Entropy,
            "std" => MetricKind::Std,
            "mutual_information" => MetricKind::MutualInformation,
            "novelty" => MetricKind::Novelty,
            other => return Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    pub metric_name: String,
    pub values: Vec<f64>,
}

impl UncertaintyScores {
    pub fn new(metric: MetricKind, values: Vec<f64>) -> Self {
        UncertaintyScores {
            metric_name: metric.name().to_string(),
            values,
        }
    }

    /// `row_id,metric,value` CSV.
    pub fn write_csv(&self, row_ids: &[String], path: &Path) -> Result<()> {
        if row_ids.len() != self.values.len() {
            return Err(Error::Dimension {
                expected: self.values.len(),
                got: row_ids.len(),
            });
        }
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "row_id,metric,value").map_err(io)?;
        for (id, v) in row_ids.iter().zip(&self.values) {
            writeln!(out, "{id},{},{v}", self.metric_name).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Binary Shannon entropy in nats, with 0·ln 0 = 0.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

pub fn max_prob_uncertainty(probs: &[f64]) -> UncertaintyScores {
    let values = probs.iter().map(|&p| 1.0 - p.max(1.0 - p)).collect();
    UncertaintyScores::new(MetricKind::MaxProb, values)
}

/// Population standard deviation of the K positive-class probabilities.
pub fn class1_std(ens: &PredictionEnsemble) -> UncertaintyScores {
    let k = ens.k() as f64;
    let values = ens
        .probs
        .column_iter()
        .map(|c| {
            let m = c.sum() / k;
            (c.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / k).sqrt()
        })
        .collect();
    UncertaintyScores::new(MetricKind::Std, values)
}

pub fn predictive_entropy(ens: &PredictionEnsemble) -> UncertaintyScores {
    let values = ens.mean().into_iter().map(binary_entropy).collect();
    UncertaintyScores::new(MetricKind::Entropy, values)
}

/// H[mean p] − mean H[p_k], clamped at 0.
pub fn mutual_information(ens: &PredictionEnsemble) -> UncertaintyScores {
    let k = ens.k() as f64;
    let values = ens
        .probs
        .column_iter()
        .map(|c| {
            let m = c.sum() / k;
            let expected = c.iter().map(|&p| binary_entropy(p)).sum::<f64>() / k;
            (binary_entropy(m) - expected).max(0.0)
        })
        .collect();
    UncertaintyScores::new(MetricKind::MutualInformation, values)
}

/// Computes a probability-based metric from an ensemble. Single-model
/// max-prob uses the ensemble mean.
pub fn score_ensemble(metric: MetricKind, ens: &PredictionEnsemble) -> Result<UncertaintyScores> {
    Ok(match metric {
        MetricKind::MaxProb => max_prob_uncertainty(&ens.mean()),
        MetricKind::Entropy => predictive_entropy(ens),
        MetricKind::Std => class1_std(ens),
        MetricKind::MutualInformation => mutual_information(ens),
        MetricKind::Novelty => {
            return Err(Error::InvalidConfig(
                "novelty is computed from a density model, not from predictions".into(),
            ))
        }
    })
}
