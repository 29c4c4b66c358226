use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as constant columns.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-column standardization fitted on training rows. Missing cells are
/// imputed with the training mean before scaling, so they map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub impute: Vec<f64>,
}

pub fn fit_scaler(features: &FeatureMatrix, train_rows: &[usize]) -> Result<ScalerStats> {
    if train_rows.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "scaler needs at least 2 training rows, got {}",
            train_rows.len()
        )));
    }
    let d = features.n_cols();
    let mut mean = vec![0.0; d];
    let mut std = vec![1.0; d];
    for j in 0..d {
        let col = features.values.column(j);
        let observed: Vec<f64> = train_rows
            .iter()
            .map(|&r| col[r])
            .filter(|v| !v.is_nan())
            .collect();
        if observed.is_empty() {
            continue;
        }
        let n = observed.len() as f64;
        let m = observed.iter().sum::<f64>() / n;
        let var = observed.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        let s = var.sqrt();
        std[j] = if s < STD_FLOOR { 1.0 } else { s };
    }
    Ok(ScalerStats {
        impute: mean.clone(),
        mean,
        std,
    })
}

impl ScalerStats {
    pub fn n_cols(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.n_cols() != self.n_cols() {
            return Err(Error::Dimension {
                expected: self.n_cols(),
                got: features.n_cols(),
            });
        }
        let mut out = features.clone();
        for (j, mut col) in out.values.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                let x = if v.is_nan() { self.impute[j] } else { *v };
                *v = (x - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, scaled: &FeatureMatrix) -> Result<FeatureMatrix> {
        if scaled.n_cols() != self.n_cols() {
            return Err(Error::Dimension {
                expected: self.n_cols(),
                got: scaled.n_cols(),
            });
        }
        let mut out = scaled.clone();
        for (j, mut col) in out.values.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

pub fn apply_scaler(stats: &ScalerStats, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    stats.apply(features)
}
