use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the observation period in hours.
pub const PERIOD_HOURS: f64 = 48.0;

/// One ICU stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub patient_id: String,
    pub label: u8,
    pub groups: BTreeSet<String>,
    /// variable id -> (time in hours, value), sorted by time. Equal
    /// timestamps keep their arrival order.
    pub series: BTreeMap<String, Vec<(f64, f64)>>,
}

impl Episode {
    pub fn n_measurements(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub(crate) fn sort_series(&mut self) {
        for points in self.series.values_mut() {
            // stable: duplicates keep arrival order
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// measurement rows with a timestamp outside [0, 48] hours
    pub out_of_window: usize,
    /// rows with an empty `value` cell
    pub empty_values: usize,
    /// labelled patients without a single usable measurement (not returned)
    pub dropped_without_measurements: usize,
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    patient_id: String,
    variable: String,
    time_hours: String,
    value: String,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    patient_id: String,
    label: String,
    #[serde(default)]
    groups: String,
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        line,
        message: err.to_string(),
    }
}

fn check_header(reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_error)?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header {:?}, got {:?}", expected, got),
        });
    }
    Ok(())
}

/// Reads the time-series and label CSVs into episodes (in label-file order).
pub fn load_episodes(
    timeseries_path: &Path,
    labels_path: &Path,
) -> Result<(Vec<Episode>, LoadReport)> {
    let mut report = LoadReport::default();

    let mut labels = open(labels_path)?;
    check_header(&mut labels, &["patient_id", "label", "groups"])?;
    let mut episodes: Vec<Episode> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    while labels.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: LabelRow = record.deserialize(None).map_err(csv_error)?;
        let label = match row.label.as_str() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Csv {
                    line,
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        if by_id.contains_key(&row.patient_id) {
            return Err(Error::Csv {
                line,
                message: format!("duplicate label row for `{}`", row.patient_id),
            });
        }
        let groups = row
            .groups
            .split(';')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        by_id.insert(row.patient_id.clone(), episodes.len());
        episodes.push(Episode {
            patient_id: row.patient_id,
            label,
            groups,
            series: BTreeMap::new(),
        });
    }

    let mut series = open(timeseries_path)?;
    check_header(
        &mut series,
        &["patient_id", "variable", "time_hours", "value"],
    )?;
    loop {
        let has_row = series.read_record(&mut record).map_err(csv_error)?;
        if !has_row {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: SeriesRow = record.deserialize(None).map_err(csv_error)?;
        let Some(&idx) = by_id.get(&row.patient_id) else {
            return Err(Error::MissingLabel(row.patient_id));
        };
        let time: f64 = row.time_hours.parse().map_err(|_| Error::Csv {
            line,
            message: format!("bad time_hours `{}`", row.time_hours),
        })?;
        if row.value.is_empty() {
            report.empty_values += 1;
            continue;
        }
        let value: f64 = row.value.parse().map_err(|_| Error::Csv {
            line,
            message: format!("bad value `{}`", row.value),
        })?;
        if !time.is_finite() || !value.is_finite() {
            return Err(Error::Csv {
                line,
                message: "non-finite time or value".into(),
            });
        }
        if !(0.0..=PERIOD_HOURS).contains(&time) {
            report.out_of_window += 1;
            continue;
        }
        episodes[idx]
            .series
            .entry(row.variable)
            .or_default()
            .push((time, value));
    }

    let before = episodes.len();
    episodes.retain(|e| e.n_measurements() > 0);
    report.dropped_without_measurements = before - episodes.len();
    for e in &mut episodes {
        e.sort_series();
    }
    Ok((episodes, report))
}

/// Writes episodes in the two CSV schemas `load_episodes` reads.
pub fn write_episodes(
    episodes: &[Episode],
    timeseries_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
        move |e| Error::io(p, e)
    }

    let file = File::create(labels_path).map_err(io(labels_path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "patient_id,label,groups").map_err(io(labels_path))?;
    for e in episodes {
        let groups: Vec<&str> = e.groups.iter().map(String::as_str).collect();
        writeln!(out, "{},{},{}", e.patient_id, e.label, groups.join(";"))
            .map_err(io(labels_path))?;
    }
    out.flush().map_err(io(labels_path))?;

    let file = File::create(timeseries_path).map_err(io(timeseries_path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "patient_id,variable,time_hours,value").map_err(io(timeseries_path))?;
    for e in episodes {
        for (var, points) in &e.series {
            for (t, v) in points {
                writeln!(out, "{},{},{},{}", e.patient_id, var, t, v)
                    .map_err(io(timeseries_path))?;
            }
        }
    }
    out.flush().map_err(io(timeseries_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let ts = write(
            dir.path(),
            "ts.csv",
            "patient_id,variable,time_hours,value\np1,hr,5.0,80\np1,hr,1.0,90\np2,ph,3,7.4\n",
        );
        let lb = write(
            dir.path(),
            "lb.csv",
            "patient_id,label,groups\np1,1,a;b\np2,0,\n",
        );
        let (eps, report) = load_episodes(&ts, &lb).unwrap();
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0].series["hr"], vec![(1.0, 90.0), (5.0, 80.0)]);
        assert_eq!(eps[0].groups.len(), 2);
        assert!(eps[1].groups.is_empty());
        assert_eq!(report, LoadReport::default());
    }

    #[test]
    fn out_of_window_rows_are_counted_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let ts = write(
            dir.path(),
            "ts.csv",
            "patient_id,variable,time_hours,value\np1,hr,50,80\np1,hr,1,90\np1,hr,2,\n",
        );
        let lb = write(dir.path(), "lb.csv", "patient_id,label,groups\np1,0,\n");
        let (eps, report) = load_episodes(&ts, &lb).unwrap();
        assert_eq!(report.out_of_window, 1);
        assert_eq!(report.empty_values, 1);
        assert_eq!(eps[0].series["hr"], vec![(1.0, 90.0)]);
    }

    #[test]
    fn duplicates_are_kept_in_arrival_order() {
        let dir = tempfile::tempdir().unwrap();
        let ts = write(
            dir.path(),
            "ts.csv",
            "patient_id,variable,time_hours,value\np1,hr,4,1\np1,hr,2,0\np1,hr,4,2\n",
        );
        let lb = write(dir.path(), "lb.csv", "patient_id,label,groups\np1,0,\n");
        let (eps, _) = load_episodes(&ts, &lb).unwrap();
        assert_eq!(
            eps[0].series["hr"],
            vec![(2.0, 0.0), (4.0, 1.0), (4.0, 2.0)]
        );

        let ts2 = dir.path().join("ts2.csv");
        let lb2 = dir.path().join("lb2.csv");
        write_episodes(&eps, &ts2, &lb2).unwrap();
        let (back, _) = load_episodes(&ts2, &lb2).unwrap();
        assert_eq!(back, eps);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let ts = write(
            dir.path(),
            "ts.csv",
            "patient_id,variable,time_hours,value\np1,hr,1,90\np1,hr,abc,80\n",
        );
        let lb = write(dir.path(), "lb.csv", "patient_id,label,groups\np1,0,\n");
        match load_episodes(&ts, &lb) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unlabelled_patient_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let ts = write(
            dir.path(),
            "ts.csv",
            "patient_id,variable,time_hours,value\np9,hr,1,90\n",
        );
        let lb = write(dir.path(), "lb.csv", "patient_id,label,groups\np1,0,\n");
        assert!(matches!(load_episodes(&ts, &lb), Err(Error::MissingLabel(id)) if id == "p9"));
    }
}
