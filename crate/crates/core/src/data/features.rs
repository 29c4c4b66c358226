//! Window/statistic feature engineering over the 48 h observation period.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::episode::{Episode, PERIOD_HOURS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Full,
    First10,
    Last10,
    First25,
    Last25,
    First50,
    Last50,
}

impl Window {
    pub const ALL: [Window; 7] = [
        Window::Full,
        Window::First10,
        Window::Last10,
        Window::First25,
        Window::Last25,
        Window::First50,
        Window::Last50,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Window::Full => "full",
            Window::First10 => "first10",
            Window::Last10 => "last10",
            Window::First25 => "first25",
            Window::Last25 => "last25",
            Window::First50 => "first50",
            Window::Last50 => "last50",
        }
    }

    /// `[start, end)` in hours; a window ending at 48 h also contains 48 h.
    pub fn bounds(self) -> (f64, f64) {
        let p = PERIOD_HOURS;
        match self {
            Window::Full => (0.0, p),
            // p / 10 and 9p / 10 are exact where 0.1·p is not
            Window::First10 => (0.0, p / 10.0),
            Window::Last10 => (9.0 * p / 10.0, p),
            Window::First25 => (0.0, 0.25 * p),
            Window::Last25 => (0.75 * p, p),
            Window::First50 => (0.0, 0.5 * p),
            Window::Last50 => (0.5 * p, p),
        }
    }

    pub fn contains(self, t: f64) -> bool {
        let (start, end) = self.bounds();
        t >= start && (t < end || (end == PERIOD_HOURS && t == end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Min,
    Max,
    Mean,
    Std,
    Skew,
    Count,
}

impl Statistic {
    pub const ALL: [Statistic; 6] = [
        Statistic::Min,
        Statistic::Max,
        Statistic::Mean,
        Statistic::Std,
        Statistic::Skew,
        Statistic::Count,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::Mean => "mean",
            Statistic::Std => "std",
            Statistic::Skew => "skew",
            Statistic::Count => "count",
        }
    }
}

pub const FEATURES_PER_VARIABLE: usize = Window::ALL.len() * Statistic::ALL.len();

/// N×D feature matrix; missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        values: DMatrix<f64>,
        column_names: Vec<String>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        if values.ncols() != column_names.len() {
            return Err(Error::Dimension {
                expected: column_names.len(),
                got: values.ncols(),
            });
        }
        if values.nrows() != row_ids.len() {
            return Err(Error::Dimension {
                expected: row_ids.len(),
                got: values.nrows(),
            });
        }
        Ok(FeatureMatrix {
            values,
            column_names,
            row_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(rows),
            column_names: self.column_names.clone(),
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
        }
    }

    pub fn same_schema(&self, other: &FeatureMatrix) -> bool {
        self.column_names == other.column_names
    }

    /// Stacks rows of `self` then `other`; schemas must agree.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if !self.same_schema(other) {
            return Err(Error::Schema(
                "cannot stack matrices with different columns".into(),
            ));
        }
        let (n1, n2, d) = (self.n_rows(), other.n_rows(), self.n_cols());
        let values = DMatrix::from_fn(n1 + n2, d, |i, j| {
            if i < n1 {
                self.values[(i, j)]
            } else {
                other.values[(i - n1, j)]
            }
        });
        let mut row_ids = self.row_ids.clone();
        row_ids.extend(other.row_ids.iter().cloned());
        Ok(FeatureMatrix {
            values,
            column_names: self.column_names.clone(),
            row_ids,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        write!(out, "patient_id").map_err(io)?;
        for name in &self.column_names {
            write!(out, ",{name}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            write!(out, "{id}").map_err(io)?;
            for j in 0..self.n_cols() {
                let v = self.values[(i, j)];
                if v.is_nan() {
                    write!(out, ",").map_err(io)?;
                } else {
                    write!(out, ",{v}").map_err(io)?;
                }
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().from_reader(file);
        let header = reader.headers().map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if header.get(0) != Some("patient_id") {
            return Err(Error::Csv {
                line: 1,
                message: "first column must be patient_id".into(),
            });
        }
        let column_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let d = column_names.len();
        let mut row_ids = Vec::new();
        let mut flat = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            row_ids.push(record[0].to_string());
            for cell in record.iter().skip(1) {
                let v = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse::<f64>().map_err(|_| Error::Csv {
                        line,
                        message: format!("bad number `{cell}`"),
                    })?
                };
                flat.push(v);
            }
        }
        let values = DMatrix::from_row_slice(row_ids.len(), d, &flat);
        FeatureMatrix::new(values, column_names, row_ids)
    }
}

pub fn column_names(variables: &[String]) -> Vec<String> {
    let mut names = Vec::with_capacity(variables.len() * FEATURES_PER_VARIABLE);
    for var in variables {
        for w in Window::ALL {
            for s in Statistic::ALL {
                names.push(format!("{}|{}|{}", var, w.name(), s.name()));
            }
        }
    }
    names
}

/// The six statistics of one window, in `Statistic::ALL` order.
pub fn window_statistics(values: &[f64]) -> [f64; 6] {
    let n = values.len();
    if n == 0 {
        return [f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0.0];
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    let scale = min.abs().max(max.abs());
    let degenerate = m2 <= (1e-14 * scale).powi(2);
    let std = if n < 2 || degenerate { 0.0 } else { m2.sqrt() };
    let skew = if n < 3 || degenerate {
        0.0
    } else {
        m3 / m2.powf(1.5)
    };
    [min, max, mean, std, skew, nf]
}

fn episode_row(episode: &Episode, variables: &[String]) -> Vec<f64> {
    let mut row = Vec::with_capacity(variables.len() * FEATURES_PER_VARIABLE);
    let mut buf = Vec::new();
    for var in variables {
        let points = episode.series.get(var).map(Vec::as_slice).unwrap_or(&[]);
        for w in Window::ALL {
            buf.clear();
            buf.extend(
                points
                    .iter()
                    .filter(|(t, _)| w.contains(*t))
                    .map(|(_, v)| *v),
            );
            row.extend_from_slice(&window_statistics(&buf));
        }
    }
    row
}

/// One row per episode (input order), `|variables| × 42` columns.
pub fn engineer_features(episodes: &[Episode], variables: &[String]) -> Result<FeatureMatrix> {
    if variables.is_empty() {
        return Err(Error::InvalidConfig("no variables to featurize".into()));
    }
    let rows: Vec<Vec<f64>> = episodes
        .par_iter()
        .map(|e| episode_row(e, variables))
        .collect();
    let d = variables.len() * FEATURES_PER_VARIABLE;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = DMatrix::from_row_slice(episodes.len(), d, &flat);
    FeatureMatrix::new(
        values,
        column_names(variables),
        episodes.iter().map(|e| e.patient_id.clone()).collect(),
    )
}

/// Copy of `features` with one column multiplied by `factor`.
pub fn perturb_feature(
    features: &FeatureMatrix,
    column: usize,
    factor: f64,
) -> Result<FeatureMatrix> {
    if column >= features.n_cols() {
        return Err(Error::Dimension {
            expected: features.n_cols(),
            got: column,
        });
    }
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "perturbation factor must be > 0, got {factor}"
        )));
    }
    let mut out = features.clone();
    out.values.column_mut(column).scale_mut(factor);
    Ok(out)
}
