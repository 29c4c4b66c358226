//! Ingestion, feature engineering, scaling, splitting and corruption.

pub mod episode;
pub mod features;
pub mod scaler;
pub mod split;
pub mod synth;

use std::collections::BTreeSet;

pub use episode::{load_episodes, write_episodes, Episode, LoadReport};
pub use features::{engineer_features, perturb_feature, FeatureMatrix, Statistic, Window};
pub use scaler::{apply_scaler, fit_scaler, ScalerStats};
pub use split::{split_dataset, DatasetSplit, DEFAULT_RATIOS};
pub use synth::{default_variables, generate_synthetic_cohort, GroupSpec, SyntheticCohortConfig};

use crate::error::{Error, Result};

/// Raw (unscaled) features with per-row labels and group tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
    pub groups: Vec<BTreeSet<String>>,
}

impl Dataset {
    pub fn from_episodes(episodes: &[Episode], variables: &[String]) -> Result<Dataset> {
        Ok(Dataset {
            features: engineer_features(episodes, variables)?,
            labels: episodes.iter().map(|e| e.label).collect(),
            groups: episodes.iter().map(|e| e.groups.clone()).collect(),
        })
    }

    /// Joins a feature matrix with the labels CSV by patient id.
    pub fn from_features_and_labels(
        features: FeatureMatrix,
        labels_path: &std::path::Path,
    ) -> Result<Dataset> {
        let file = std::fs::File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut by_id = std::collections::HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let label: u8 = match record.get(1) {
                Some("0") => 0,
                Some("1") => 1,
                other => {
                    return Err(Error::Csv {
                        line,
                        message: format!("bad label {other:?}"),
                    })
                }
            };
            let groups: BTreeSet<String> = record
                .get(2)
                .unwrap_or("")
                .split(';')
                .filter(|g| !g.is_empty())
                .map(str::to_string)
                .collect();
            by_id.insert(record[0].to_string(), (label, groups));
        }
        let mut labels = Vec::with_capacity(features.n_rows());
        let mut groups = Vec::with_capacity(features.n_rows());
        for id in &features.row_ids {
            let (l, g) = by_id
                .get(id)
                .ok_or_else(|| Error::MissingLabel(id.clone()))?;
            labels.push(*l);
            groups.push(g.clone());
        }
        Ok(Dataset {
            features,
            labels,
            groups,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            groups: rows.iter().map(|&r| self.groups[r].clone()).collect(),
        }
    }

    pub fn rows_in_group(&self, tag: &str) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.groups[i].contains(tag))
            .collect()
    }
}
