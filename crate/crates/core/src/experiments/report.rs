//! Experiment reports: JSON with a fixed key order plus a flat CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mortality,
    Perturbation,
    GroupHoldout,
    CrossDataset,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Mortality => "mortality",
            ExperimentKind::Perturbation => "perturbation",
            ExperimentKind::GroupHoldout => "group_holdout",
            ExperimentKind::CrossDataset => "cross_dataset",
        }
    }
}

/// Mean ± std of one (model, metric, group-or-factor) cell over `n` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub model: String,
    pub metric: String,
    pub group_or_factor: String,
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    /// OOD rows relative to all rows considered.
    pub relative_size: f64,
    /// Fraction of features whose Welch test against the ID rows has p < 0.01.
    pub significant_feature_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub n_runs: usize,
    pub run_seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub ood_auc: Vec<ResultEntry>,
    pub mortality_auc: Vec<ResultEntry>,
    pub groups: Vec<GroupSummary>,
}

pub const MORTALITY_METRIC: &str = "mortality_auc";
pub const CSV_HEADER: &str = "experiment,model,metric,group_or_factor,mean,std,n";

/// Collects per-run values in first-seen key order.
#[derive(Debug, Default)]
pub struct Accumulator {
    keys: Vec<(String, String, String)>,
    values: Vec<Vec<f64>>,
}

impl Accumulator {
    pub fn push(&mut self, model: &str, metric: &str, group_or_factor: &str, value: f64) {
        let pos = self
            .keys
            .iter()
            .position(|(m, k, g)| m == model && k == metric && g == group_or_factor);
        match pos {
            Some(i) => self.values[i].push(value),
            None => {
                self.keys
                    .push((model.into(), metric.into(), group_or_factor.into()));
                self.values.push(vec![value]);
            }
        }
    }

    pub fn into_entries(self) -> Vec<ResultEntry> {
        self.keys
            .into_iter()
            .zip(self.values)
            .map(|((model, metric, group_or_factor), v)| {
                let (mean, std) = mean_std(&v);
                ResultEntry {
                    model,
                    metric,
                    group_or_factor,
                    mean,
                    std,
                    n: v.len(),
                }
            })
            .collect()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<ExperimentReport> {
        Ok(serde_json::from_str(s)?)
    }

    /// CSV rows: every OOD entry, then every mortality entry (metric
    /// `mortality_auc`). No header.
    pub fn csv_rows(&self, out: &mut String) {
        let exp = self.experiment.name();
        let rows = self.ood_auc.iter().chain(&self.mortality_auc);
        for e in rows {
            let std = e.std.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{exp},{},{},{},{},{std},{}",
                csv_field(&e.model),
                csv_field(&e.metric),
                csv_field(&e.group_or_factor),
                e.mean,
                e.n
            );
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        self.csv_rows(&mut out);
        out
    }

    pub fn file_stem(&self) -> String {
        format!("report_{}_seed{}", self.experiment.name(), self.master_seed)
    }
}

/// Concatenates several reports into one CSV.
pub fn reports_to_csv(reports: &[ExperimentReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        r.csv_rows(&mut out);
    }
    out
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`, atomically replacing
/// earlier files.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        ));
    }
    let stem = report.file_stem();
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    crate::io_util::write_atomic(&json, report.to_json()?.as_bytes())?;
    crate::io_util::write_atomic(&csv, report.to_csv().as_bytes())?;
    Ok(vec![json, csv])
}
