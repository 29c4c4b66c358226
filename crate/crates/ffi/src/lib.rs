//! C ABI over `uqtab`.
//!
//! Every function returns a [`UqtabStatus`]; on failure a message is kept
//! per thread and read with [`uqtab_last_error_message`]. Handles are
//! opaque, created by `*_load`/`*_read_csv` and released by `*_free`.
//! Buffers are caller-owned unless a function says otherwise.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use serde::Deserialize;
use uqtab::data::{split_dataset, FeatureMatrix, DEFAULT_RATIOS};
use uqtab::experiments::{
    cross_dataset_experiment, evaluate_mortality, group_holdout_experiment, run_perturbation,
    Registry, DEFAULT_FACTORS, DEFAULT_RUNS,
};
use uqtab::metrics::{score_ensemble, MetricKind, PredictionEnsemble};
use uqtab::models::persist::{load_model, ModelFile};
use uqtab::numerics::RngStream;
use uqtab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqtabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Dimension = 5,
    NonFinite = 6,
    SingleClass = 7,
    Diverged = 8,
    Schema = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqtabMetric {
    MaxProb = 0,
    Entropy = 1,
    Std = 2,
    MutualInformation = 3,
    Novelty = 4,
}

impl From<UqtabMetric> for MetricKind {
    fn from(m: UqtabMetric) -> Self {
        match m {
            UqtabMetric::MaxProb => MetricKind::MaxProb,
            UqtabMetric::Entropy => MetricKind::Entropy,
            UqtabMetric::Std => MetricKind::Std,
            UqtabMetric::MutualInformation => MetricKind::MutualInformation,
            UqtabMetric::Novelty => MetricKind::Novelty,
        }
    }
}

impl From<MetricKind> for UqtabMetric {
    fn from(m: MetricKind) -> Self {
        match m {
            MetricKind::MaxProb => UqtabMetric::MaxProb,
            MetricKind::Entropy => UqtabMetric::Entropy,
            MetricKind::Std => UqtabMetric::Std,
            MetricKind::MutualInformation => UqtabMetric::MutualInformation,
            MetricKind::Novelty => UqtabMetric::Novelty,
        }
    }
}

/// Result of a Welch t-test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UqtabWelch {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Nonzero when both samples have zero variance (t = 0, p = 1).
    pub degenerate: u8,
}

/// Feature matrix loaded from CSV.
pub struct UqtabFeatures {
    inner: FeatureMatrix,
}

/// Fitted model together with its stored scaler.
pub struct UqtabModel {
    inner: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

struct Failure(UqtabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => UqtabStatus::Io,
            Error::Csv { .. } | Error::Json(_) | Error::Format(_) | Error::MissingLabel(_) => {
                UqtabStatus::Parse
            }
            Error::InvalidConfig(_) => UqtabStatus::InvalidArgument,
            Error::Dimension { .. } => UqtabStatus::Dimension,
            Error::NonFinite(_) => UqtabStatus::NonFinite,
            Error::SingleClass(_) => UqtabStatus::SingleClass,
            Error::AllTrialsDiverged(_) => UqtabStatus::Diverged,
            Error::Schema(_) => UqtabStatus::Schema,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(UqtabStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> UqtabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            UqtabStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            UqtabStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure(UqtabStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut()
        .ok_or_else(|| Failure(UqtabStatus::NullPointer, format!("{name} is null")))
}

unsafe fn path_arg(ptr: *const c_char, name: &str) -> FfiResult<PathBuf> {
    Ok(PathBuf::from(str_arg(ptr, name)?))
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(Failure(UqtabStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn uqtab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uqtab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// AUC-ROC of `scores` against 0/1 `labels` (ties count one half).
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_auc_roc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> UqtabStatus {
    guard(|| {
        let auc =
            uqtab::evaluation::auc_roc(slice(scores, n, "scores")?, slice(labels, n, "labels")?)?;
        *out_ref(out, "out")? = auc;
        Ok(())
    })
}

/// AUC for separating OOD scores (positives) from ID scores.
///
/// # Safety
/// The input pointers must cover `n_id` and `n_ood` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_ood_auc(
    id_scores: *const f64,
    n_id: usize,
    ood_scores: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> UqtabStatus {
    guard(|| {
        let auc = uqtab::evaluation::ood_auc(
            slice(id_scores, n_id, "id_scores")?,
            slice(ood_scores, n_ood, "ood_scores")?,
        )?;
        *out_ref(out, "out")? = auc;
        Ok(())
    })
}

/// Welch's unequal-variance t-test.
///
/// # Safety
/// `a` and `b` must cover `n_a` and `n_b` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_welch_t_test(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    out: *mut UqtabWelch,
) -> UqtabStatus {
    guard(|| {
        let r = uqtab::evaluation::welch_t_test(slice(a, n_a, "a")?, slice(b, n_b, "b")?)?;
        *out_ref(out, "out")? = UqtabWelch {
            t_statistic: r.t_statistic,
            degrees_of_freedom: r.degrees_of_freedom,
            p_value: r.p_value,
            degenerate: u8::from(r.degenerate),
        };
        Ok(())
    })
}

/// Uncertainty of `n` samples from `k` predicted class-1 probabilities
/// each, stored row-major as `k` rows of `n`. Writes `n` values; higher
/// means more uncertain. `UQTAB_METRIC_MAX_PROB` uses the mean over the
/// `k` rows; `UQTAB_METRIC_NOVELTY` is not defined for probabilities.
///
/// # Safety
/// `probs` must cover `k * n` elements and `out` `n` writable elements.
#[no_mangle]
pub unsafe extern "C" fn uqtab_uncertainty(
    probs: *const f64,
    k: usize,
    n: usize,
    metric: UqtabMetric,
    out: *mut f64,
) -> UqtabStatus {
    guard(|| {
        let total = k.checked_mul(n).ok_or_else(|| invalid("k * n overflows"))?;
        let flat = slice(probs, total, "probs")?;
        let rows: Vec<Vec<f64>> = flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        let ens = PredictionEnsemble::from_rows(rows)?;
        let scores = score_ensemble(metric.into(), &ens)?;
        if n > 0 {
            let dst = std::slice::from_raw_parts_mut(out_ref(out, "out")?, n);
            dst.copy_from_slice(&scores.values);
        }
        Ok(())
    })
}

/// Loads a feature matrix CSV (`row_id` column plus named features).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_features_read_csv(
    path: *const c_char,
    out: *mut *mut UqtabFeatures,
) -> UqtabStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let inner = FeatureMatrix::read_csv(&path_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(UqtabFeatures { inner }));
        Ok(())
    })
}

/// Rows and columns of a feature matrix.
///
/// # Safety
/// `features` must come from `uqtab_features_read_csv`; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_features_shape(
    features: *const UqtabFeatures,
    rows: *mut usize,
    cols: *mut usize,
) -> UqtabStatus {
    guard(|| {
        let f = features
            .as_ref()
            .ok_or_else(|| Failure(UqtabStatus::NullPointer, "features is null".into()))?;
        *out_ref(rows, "rows")? = f.inner.n_rows();
        *out_ref(cols, "cols")? = f.inner.n_cols();
        Ok(())
    })
}

/// Releases a feature matrix. Null is ignored.
///
/// # Safety
/// `features` must come from `uqtab_features_read_csv` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uqtab_features_free(features: *mut UqtabFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Loads a model file written by `uqtab train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_model_load(
    path: *const c_char,
    out: *mut *mut UqtabModel,
) -> UqtabStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let inner = load_model(&path_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(UqtabModel { inner }));
        Ok(())
    })
}

unsafe fn model_ref<'a>(model: *const UqtabModel) -> FfiResult<&'a UqtabModel> {
    model
        .as_ref()
        .ok_or_else(|| Failure(UqtabStatus::NullPointer, "model is null".into()))
}

/// Number of uncertainty metrics the model family reports.
///
/// # Safety
/// `model` must come from `uqtab_model_load`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_model_metric_count(
    model: *const UqtabModel,
    out: *mut usize,
) -> UqtabStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.inner.model.kind().metrics().len();
        Ok(())
    })
}

/// The `index`-th metric of the model family, in report order.
///
/// # Safety
/// `model` must come from `uqtab_model_load`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_model_metric(
    model: *const UqtabModel,
    index: usize,
    out: *mut UqtabMetric,
) -> UqtabStatus {
    guard(|| {
        let metrics = model_ref(model)?.inner.model.kind().metrics();
        let m = metrics.get(index).ok_or_else(|| {
            invalid(format!(
                "metric index {index} out of range (model has {})",
                metrics.len()
            ))
        })?;
        *out_ref(out, "out")? = (*m).into();
        Ok(())
    })
}

/// Scores every row of raw (unscaled) `features` with one of the model's
/// metrics. The stored scaler is applied first. `n_samples` is the number
/// of stochastic passes for MC Dropout and BBB; `seed` fixes them.
///
/// # Safety
/// Handles must be live; `out` must have room for `out_len` values, at
/// least the number of rows.
#[no_mangle]
pub unsafe extern "C" fn uqtab_model_uncertainty(
    model: *const UqtabModel,
    features: *const UqtabFeatures,
    metric: UqtabMetric,
    n_samples: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> UqtabStatus {
    guard(|| {
        let file = &model_ref(model)?.inner;
        let f = &features
            .as_ref()
            .ok_or_else(|| Failure(UqtabStatus::NullPointer, "features is null".into()))?
            .inner;
        if out_len < f.n_rows() {
            return Err(invalid(format!("out_len {out_len} < {} rows", f.n_rows())));
        }
        let kind = file.model.kind();
        let wanted = MetricKind::from(metric);
        let idx = kind
            .metrics()
            .iter()
            .position(|&m| m == wanted)
            .ok_or_else(|| invalid(format!("{kind} does not report {wanted}")))?;
        let x = match &file.scaler {
            Some(s) => s.apply(f)?.values,
            None => f.values.clone(),
        };
        let mut rng = RngStream::new(seed, "ffi-score", 0);
        let scores = file.model.uncertainty(&x, n_samples.max(1), &mut rng)?;
        if f.n_rows() > 0 {
            std::slice::from_raw_parts_mut(out_ref(out, "out")?, f.n_rows())
                .copy_from_slice(&scores[idx].values);
        }
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `uqtab_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uqtab_model_free(model: *mut UqtabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ExperimentRequestKind {
    Mortality,
    Perturbation,
    GroupHoldout,
    CrossDataset,
}

/// JSON accepted by [`uqtab_run_experiment_json`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentRequest {
    experiment: ExperimentRequestKind,
    /// Directory with features.csv and labels.csv.
    data: PathBuf,
    /// Second dataset for cross-dataset runs.
    #[serde(default)]
    other: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    registry: Registry,
    #[serde(default)]
    runs: Option<usize>,
    #[serde(default)]
    factors: Option<Vec<f64>>,
    #[serde(default)]
    repeats: Option<usize>,
    #[serde(default)]
    groups: Option<Vec<String>>,
}

fn run_request(req: ExperimentRequest) -> FfiResult<String> {
    req.registry.hyperparameters.validate()?;
    let load = |p: &Path| uqtab::cli::load_dataset(p);
    let data = load(&req.data)?;
    let master = RngStream::new(req.seed, "uqtab", 0);
    let runs = req.runs.unwrap_or(DEFAULT_RUNS);
    let split = || split_dataset(data.n_rows(), DEFAULT_RATIOS, &mut master.child("split", 0));
    let report = match req.experiment {
        ExperimentRequestKind::Mortality => evaluate_mortality(
            &req.registry,
            &data,
            &split()?,
            runs,
            &master.child("eval", 0),
        )?,
        ExperimentRequestKind::Perturbation => run_perturbation(
            &req.registry,
            &data,
            &split()?,
            &req.factors.unwrap_or(DEFAULT_FACTORS.to_vec()),
            req.repeats.unwrap_or(100),
            &master,
        )?,
        ExperimentRequestKind::GroupHoldout => {
            let groups = match req.groups {
                Some(g) => g,
                None => {
                    let all: BTreeSet<String> = data.groups.iter().flatten().cloned().collect();
                    all.into_iter().collect()
                }
            };
            if groups.is_empty() {
                return Err(invalid(
                    "no `groups` given and the labels have no group tags",
                ));
            }
            group_holdout_experiment(
                &data,
                &req.registry,
                &groups,
                runs,
                &master.child("holdout", 0),
            )?
        }
        ExperimentRequestKind::CrossDataset => {
            let other = load(
                req.other
                    .as_deref()
                    .ok_or_else(|| invalid("cross_dataset needs `other`"))?,
            )?;
            cross_dataset_experiment(
                ("A", &data),
                ("B", &other),
                &req.registry,
                runs,
                &master.child("crossdata", 0),
            )?
        }
    };
    Ok(report.to_json()?)
}

/// Runs one experiment described by a JSON object and returns the report
/// JSON in `*out`, to be released with `uqtab_string_free`. Keys:
/// `experiment` (`mortality`, `perturbation`, `group_holdout`,
/// `cross_dataset`), `data`, and optionally `other`, `seed`, `registry`,
/// `runs`, `factors`, `repeats`, `groups` (default: every tag). Seeds match the CLI, so the
/// report equals the one `uqtab` writes for the same settings.
///
/// # Safety
/// `request_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uqtab_run_experiment_json(
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> UqtabStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let req: ExperimentRequest =
            serde_json::from_str(str_arg(request_json, "request_json")?)
                .map_err(|e| Failure(UqtabStatus::Parse, format!("request: {e}")))?;
        let json = run_request(req)?;
        *slot = CString::new(json)
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uqtab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
