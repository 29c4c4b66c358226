//! Command-line front end. `run_command` parses argv, merges the optional
//! JSON config file (flags win over file values, file values over
//! defaults) and dispatches to the pipeline.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    engineer_features, generate_synthetic_cohort, load_episodes, split_dataset, write_episodes,
    Dataset, DatasetSplit, FeatureMatrix, GroupSpec, SyntheticCohortConfig, DEFAULT_RATIOS,
};
use crate::error::{Error, Result};
use crate::experiments::search::{default_budget, SEARCHABLE};
use crate::experiments::{
    cross_dataset_experiment, evaluate_mortality, group_holdout_experiment,
    perturbation_experiment, prepare, random_search, reports_to_csv, run_perturbation,
    train_registry, write_report, ExperimentReport, Hyperparameters, Registry, SearchSpace,
    DEFAULT_FACTORS, DEFAULT_RUNS,
};
use crate::models::persist::{load_model, save_model, ModelFile, Provenance};
use crate::models::{ModelKind, TrainedModel};
use crate::numerics::RngStream;

pub const SEED_ENV: &str = "UQTAB_SEED";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const TUNED_FILE: &str = "tuned.json";
pub const MODEL_EXT: &str = "uqtb";

/// Every setting a command can take. The config file is this struct as
/// flat JSON; absent keys fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mortality_rate: Option<f64>,
    /// `tag:prevalence:shift` entries for synthetic groups.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_specs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<PathBuf>>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if top.$f.is_some() { self.$f = top.$f; } )* };
        }
        take!(
            seed,
            jobs,
            data,
            other,
            out,
            n,
            variables,
            mortality_rate,
            group_specs,
            groups,
            models,
            models_dir,
            hyperparameters,
            members,
            max_epochs,
            oracle,
            runs,
            factors,
            repeats,
            budget,
            names,
            inputs
        );
        self
    }
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Master seed (falls back to $UQTAB_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Flat JSON file with default values for any flag
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores); output does not depend on it
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
struct RegistryArgs {
    /// Comma-separated model names (default: every model the command supports)
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    models: Option<Vec<String>>,
    /// JSON hyperparameters, e.g. the output of `tune`
    #[arg(long, value_name = "FILE")]
    hyperparameters: Option<PathBuf>,
    /// Ensemble members and stochastic forward passes [default: 10]
    #[arg(long)]
    members: Option<usize>,
    /// Maximum training epochs [default: 10]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Add an oracle score to every OOD comparison
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "uqtab",
    version,
    about = "Uncertainty estimation and OOD-detection benchmarks for tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (time-series and labels CSVs)
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of patients [default: 5000]
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated variable subset [default: the 14 shared variables]
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        variables: Option<Vec<String>>,
        /// Target in-hospital mortality rate [default: 0.13]
        #[arg(long)]
        mortality_rate: Option<f64>,
        /// Shifted subgroup as TAG:PREVALENCE:SHIFT (repeatable)
        #[arg(long = "group", value_name = "SPEC")]
        group_specs: Option<Vec<String>>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a time-series directory into the feature matrix CSV
    Featurize {
        #[command(flatten)]
        common: Common,
        /// Directory with timeseries.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output CSV [default: <data>/features.csv]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random hyperparameter search; writes tuned.json and the trial logs
    Tune {
        #[command(flatten)]
        common: Common,
        /// Directory with features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Trials per model [default: 40, BBB 60, LogReg the C grid]
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train models on the seeded split and save them
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory with features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Output directory for split.json and the model files
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mortality AUC-ROC of every discriminator over several seeds
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory with features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Training seeds to average over [default: 5]
        #[arg(long)]
        runs: Option<usize>,
        /// Report directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature-scaling OOD experiment
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Directory with features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Use the models and split saved by `train` instead of training
        #[arg(long, value_name = "DIR")]
        models_dir: Option<PathBuf>,
        /// Comma-separated scale factors [default: 10,100,1000,10000]
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
        /// Distinct columns per factor [default: 100]
        #[arg(long)]
        repeats: Option<usize>,
        /// Report directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hold out patient groups and treat them as OOD
    Holdout {
        #[command(flatten)]
        common: Common,
        /// Directory with features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Comma-separated group tags [default: every tag in labels.csv]
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<String>>,
        /// Runs per group [default: 5]
        #[arg(long)]
        runs: Option<usize>,
        /// Report directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on one dataset and treat the other as OOD, both ways
    Crossdata {
        #[command(flatten)]
        common: Common,
        /// First dataset directory
        #[arg(long)]
        data: Option<PathBuf>,
        /// Second dataset directory
        #[arg(long)]
        other: Option<PathBuf>,
        /// Display names of the two datasets [default: A,B]
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
        #[command(flatten)]
        registry: RegistryArgs,
        /// Runs per direction [default: 5]
        #[arg(long)]
        runs: Option<usize>,
        /// Report directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge JSON reports into one CSV
    Report {
        #[command(flatten)]
        common: Common,
        /// Report JSON files
        #[arg(long, num_args = 1.., value_name = "FILES")]
        inputs: Option<Vec<PathBuf>>,
        /// Output CSV (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Runs one invocation and returns the process exit code: 0 success,
/// 1 runtime error, 2 usage error. Errors go to stderr as a single
/// `uqtab-error[<kind>]: <message>` line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("uqtab-error[usage]: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!(
                "uqtab-error[{}]: {}",
                e.kind(),
                e.to_string().replace('\n', " ")
            );
            1
        }
    }
}

fn registry_overlay(r: RegistryArgs) -> RunConfig {
    RunConfig {
        models: r.models,
        hyperparameters: r.hyperparameters,
        members: r.members,
        max_epochs: r.max_epochs,
        oracle: r.oracle.then_some(true),
        ..RunConfig::default()
    }
}

fn split_command(cmd: Command) -> (Common, RunConfig, &'static str) {
    match cmd {
        Command::Synth {
            common,
            n,
            variables,
            mortality_rate,
            group_specs,
            out,
        } => (
            common,
            RunConfig {
                n,
                variables,
                mortality_rate,
                group_specs,
                out,
                ..Default::default()
            },
            "synth",
        ),
        Command::Featurize { common, data, out } => (
            common,
            RunConfig {
                data,
                out,
                ..Default::default()
            },
            "featurize",
        ),
        Command::Tune {
            common,
            data,
            registry,
            budget,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                budget,
                out,
                ..Default::default()
            }),
            "tune",
        ),
        Command::Train {
            common,
            data,
            registry,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                out,
                ..Default::default()
            }),
            "train",
        ),
        Command::Eval {
            common,
            data,
            registry,
            runs,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                runs,
                out,
                ..Default::default()
            }),
            "eval",
        ),
        Command::Perturb {
            common,
            data,
            registry,
            models_dir,
            factors,
            repeats,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                models_dir,
                factors,
                repeats,
                out,
                ..Default::default()
            }),
            "perturb",
        ),
        Command::Holdout {
            common,
            data,
            registry,
            groups,
            runs,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                groups,
                runs,
                out,
                ..Default::default()
            }),
            "holdout",
        ),
        Command::Crossdata {
            common,
            data,
            other,
            names,
            registry,
            runs,
            out,
        } => (
            common,
            registry_overlay(registry).overlay(RunConfig {
                data,
                other,
                names,
                runs,
                out,
                ..Default::default()
            }),
            "crossdata",
        ),
        Command::Report {
            common,
            inputs,
            out,
        } => (
            common,
            RunConfig {
                inputs,
                out,
                ..Default::default()
            },
            "report",
        ),
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    let (common, flags, name) = split_command(cmd);
    let file = match &common.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    let mut cfg = file.overlay(flags).overlay(RunConfig {
        seed: common.seed,
        jobs: common.jobs,
        ..Default::default()
    });
    if cfg.seed.is_none() {
        if let Ok(v) = std::env::var(SEED_ENV) {
            match v.trim().parse() {
                Ok(s) => cfg.seed = Some(s),
                Err(_) => return usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| {
            Failure::Usage(format!(
                "cannot start {} worker threads: {e}",
                cfg.jobs.unwrap_or(0)
            ))
        })?;
    pool.install(|| match name {
        "synth" => cmd_synth(&cfg),
        "featurize" => cmd_featurize(&cfg),
        "tune" => cmd_tune(&cfg),
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "perturb" => cmd_perturb(&cfg),
        "holdout" => cmd_holdout(&cfg),
        "crossdata" => cmd_crossdata(&cfg),
        "report" => cmd_report(&cfg),
        _ => unreachable!("every subcommand is dispatched"),
    })
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn master(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.seed.unwrap_or(0), "uqtab", 0)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = required(&cfg.out, "out")?.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn parse_group_spec(s: &str) -> CliResult<GroupSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Usage(format!("group `{s}` must be TAG:PREVALENCE:SHIFT"));
    if parts.len() != 3 || parts[0].is_empty() {
        return Err(bad());
    }
    Ok(GroupSpec {
        tag: parts[0].to_string(),
        prevalence: parts[1].parse().map_err(|_| bad())?,
        shift_scale: parts[2].parse().map_err(|_| bad())?,
    })
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let dir = out_dir(cfg)?;
    let defaults = SyntheticCohortConfig::default();
    let groups = cfg
        .group_specs
        .iter()
        .flatten()
        .map(|s| parse_group_spec(s))
        .collect::<CliResult<Vec<_>>>()?;
    let synth = SyntheticCohortConfig {
        n_patients: cfg.n.unwrap_or(defaults.n_patients),
        variables: cfg.variables.clone().unwrap_or(defaults.variables.clone()),
        mortality_rate: cfg.mortality_rate.unwrap_or(defaults.mortality_rate),
        groups,
        seed: cfg.seed.unwrap_or(0),
        ..defaults
    };
    synth
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let episodes = generate_synthetic_cohort(&synth)?;
    let (ts, labels) = (dir.join(TIMESERIES_FILE), dir.join(LABELS_FILE));
    write_episodes(&episodes, &ts, &labels)?;
    println!("{}\n{}", ts.display(), labels.display());
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig) -> CliResult<()> {
    let data = required(&cfg.data, "data")?;
    let (episodes, report) = load_episodes(&data.join(TIMESERIES_FILE), &data.join(LABELS_FILE))?;
    let mut variables: Vec<String> = episodes
        .iter()
        .flat_map(|e| e.series.keys().cloned())
        .collect();
    variables.sort();
    variables.dedup();
    let ordered = order_variables(variables);
    let features = engineer_features(&episodes, &ordered)?;
    let out = cfg.out.clone().unwrap_or_else(|| data.join(FEATURES_FILE));
    features.write_csv(&out)?;
    if report.out_of_window + report.empty_values + report.dropped_without_measurements > 0 {
        eprintln!(
            "skipped {} out-of-window rows, {} empty values; dropped {} patients without measurements",
            report.out_of_window, report.empty_values, report.dropped_without_measurements
        );
    }
    println!("{}", out.display());
    Ok(())
}

/// Known variables keep their canonical order; others follow alphabetically.
fn order_variables(found: Vec<String>) -> Vec<String> {
    let canonical = crate::data::default_variables();
    let mut out: Vec<String> = canonical
        .iter()
        .filter(|v| found.contains(v))
        .cloned()
        .collect();
    out.extend(found.into_iter().filter(|v| !canonical.contains(v)));
    out
}

/// Reads `features.csv` and `labels.csv` from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features = FeatureMatrix::read_csv(&dir.join(FEATURES_FILE))?;
    Dataset::from_features_and_labels(features, &dir.join(LABELS_FILE))
}

fn hyperparameters(cfg: &RunConfig) -> CliResult<Hyperparameters> {
    let mut hp = match &cfg.hyperparameters {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => Hyperparameters::default(),
    };
    if let Some(m) = cfg.members {
        hp.n_members = m;
    }
    if let Some(e) = cfg.max_epochs {
        hp.max_epochs = e;
    }
    hp.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(hp)
}

fn model_kinds(cfg: &RunConfig, default: &[ModelKind]) -> CliResult<Vec<ModelKind>> {
    match &cfg.models {
        None => Ok(default.to_vec()),
        Some(names) if names.is_empty() => usage("--models must name at least one model"),
        Some(names) => names
            .iter()
            .map(|n| {
                n.parse::<ModelKind>()
                    .map_err(|e| Failure::Usage(e.to_string()))
            })
            .collect(),
    }
}

fn registry(cfg: &RunConfig) -> CliResult<Registry> {
    Ok(Registry {
        models: model_kinds(cfg, &ModelKind::ALL)?,
        hyperparameters: hyperparameters(cfg)?,
        inject_oracle: cfg.oracle.unwrap_or(false),
    })
}

fn seeded_split(dataset: &Dataset, rng: &RngStream) -> Result<DatasetSplit> {
    split_dataset(dataset.n_rows(), DEFAULT_RATIOS, &mut rng.child("split", 0))
}

fn emit(report: &ExperimentReport, cfg: &RunConfig) -> CliResult<()> {
    for p in write_report(report, &out_dir(cfg)?)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_tune(cfg: &RunConfig) -> CliResult<()> {
    let kinds = model_kinds(cfg, &SEARCHABLE)?;
    if let Some(k) = kinds.iter().find(|k| !SEARCHABLE.contains(k)) {
        return usage(format!("{k} has no search space"));
    }
    let mut hp = hyperparameters(cfg)?;
    let dataset = load_dataset(required(&cfg.data, "data")?)?;
    let dir = out_dir(cfg)?;
    let rng = master(cfg);
    let prepared = prepare(&dataset, &seeded_split(&dataset, &rng)?)?;
    let space = SearchSpace::default();
    let seed = cfg.seed.unwrap_or(0);
    let base = hp.clone();
    for kind in kinds {
        let budget = cfg.budget.unwrap_or_else(|| default_budget(kind));
        let outcome = random_search(
            &space,
            kind,
            budget,
            &base,
            prepared.train_data(),
            &rng.child("tune", 0).child(kind.name(), 0),
        )?;
        outcome.best.apply(&mut hp);
        let log = dir.join(format!("search_{}_seed{seed}.json", kind.name()));
        crate::io_util::write_atomic(
            &log,
            format!(
                "{}\n",
                serde_json::to_string_pretty(&outcome).map_err(Error::from)?
            )
            .as_bytes(),
        )?;
        println!("{}", log.display());
    }
    let tuned = dir.join(TUNED_FILE);
    crate::io_util::write_atomic(
        &tuned,
        format!(
            "{}\n",
            serde_json::to_string_pretty(&hp).map_err(Error::from)?
        )
        .as_bytes(),
    )?;
    println!("{}", tuned.display());
    Ok(())
}

fn model_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}.{MODEL_EXT}", kind.name()))
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let reg = registry(cfg)?;
    let dataset = load_dataset(required(&cfg.data, "data")?)?;
    let dir = out_dir(cfg)?;
    let rng = master(cfg);
    let split = seeded_split(&dataset, &rng)?;
    let prepared = prepare(&dataset, &split)?;
    let models_rng = rng.child("models", 0);
    let models = train_registry(&reg, prepared.train_data(), &models_rng)?;
    let split_path = dir.join(SPLIT_FILE);
    crate::io_util::write_atomic(
        &split_path,
        format!("{}\n", serde_json::to_string(&split).map_err(Error::from)?).as_bytes(),
    )?;
    println!("{}", split_path.display());
    let hp = serde_json::to_value(&reg.hyperparameters).map_err(Error::from)?;
    for model in models {
        let kind = model.kind();
        let path = model_path(&dir, kind);
        let file = ModelFile {
            model,
            scaler: Some(prepared.scaler.clone()),
            provenance: Some(Provenance {
                master_seed: rng.master_seed,
                stream: format!("uqtab/models/{}", kind.name()),
                hyperparameters: hp.clone(),
            }),
        };
        save_model(&file, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let reg = registry(cfg)?;
    let dataset = load_dataset(required(&cfg.data, "data")?)?;
    let rng = master(cfg);
    let split = seeded_split(&dataset, &rng)?;
    let report = evaluate_mortality(
        &reg,
        &dataset,
        &split,
        cfg.runs.unwrap_or(DEFAULT_RUNS),
        &rng.child("eval", 0),
    )?;
    emit(&report, cfg)
}

fn load_saved_models(dir: &Path, kinds: &[ModelKind], explicit: bool) -> Result<Vec<ModelFile>> {
    let mut out = Vec::new();
    for &kind in kinds {
        let path = model_path(dir, kind);
        if path.exists() {
            out.push(load_model(&path)?);
        } else if explicit {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "model file missing"),
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no model files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn cmd_perturb(cfg: &RunConfig) -> CliResult<()> {
    let reg = registry(cfg)?;
    let dataset = load_dataset(required(&cfg.data, "data")?)?;
    let rng = master(cfg);
    let factors = cfg.factors.clone().unwrap_or(DEFAULT_FACTORS.to_vec());
    let repeats = cfg.repeats.unwrap_or(100);
    let report = match &cfg.models_dir {
        None => run_perturbation(
            &reg,
            &dataset,
            &seeded_split(&dataset, &rng)?,
            &factors,
            repeats,
            &rng,
        )?,
        Some(dir) => {
            let split_path = dir.join(SPLIT_FILE);
            let text =
                std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
            let split: DatasetSplit = serde_json::from_str(&text).map_err(Error::from)?;
            let files = load_saved_models(dir, &reg.models, cfg.models.is_some())?;
            let scaler = files[0]
                .scaler
                .clone()
                .ok_or_else(|| Error::Format("model file carries no scaler".into()))?;
            if files.iter().any(|f| f.scaler.as_ref() != Some(&scaler)) {
                return Err(
                    Error::Format("saved models were fitted on different scalers".into()).into(),
                );
            }
            let test = scaler.apply(&dataset.features.select_rows(&split.test))?;
            let models: Vec<TrainedModel> = files.into_iter().map(|f| f.model).collect();
            perturbation_experiment(
                &models,
                &test,
                &factors,
                repeats,
                reg.hyperparameters.n_members,
                reg.inject_oracle,
                &rng,
            )?
        }
    };
    emit(&report, cfg)
}

fn cmd_holdout(cfg: &RunConfig) -> CliResult<()> {
    let reg = registry(cfg)?;
    let dataset = load_dataset(required(&cfg.data, "data")?)?;
    let tags: Vec<String> = match &cfg.groups {
        Some(g) => g.clone(),
        None => {
            let all: std::collections::BTreeSet<String> =
                dataset.groups.iter().flatten().cloned().collect();
            all.into_iter().collect()
        }
    };
    if tags.is_empty() {
        return usage("no groups given and labels.csv has no group tags");
    }
    let report = group_holdout_experiment(
        &dataset,
        &reg,
        &tags,
        cfg.runs.unwrap_or(DEFAULT_RUNS),
        &master(cfg).child("holdout", 0),
    )?;
    emit(&report, cfg)
}

fn cmd_crossdata(cfg: &RunConfig) -> CliResult<()> {
    let reg = registry(cfg)?;
    let names = cfg
        .names
        .clone()
        .unwrap_or_else(|| vec!["A".into(), "B".into()]);
    if names.len() != 2 || names[0] == names[1] {
        return usage("--names takes two distinct names");
    }
    let a = load_dataset(required(&cfg.data, "data")?)?;
    let b = load_dataset(required(&cfg.other, "other")?)?;
    let report = cross_dataset_experiment(
        (&names[0], &a),
        (&names[1], &b),
        &reg,
        cfg.runs.unwrap_or(DEFAULT_RUNS),
        &master(cfg).child("crossdata", 0),
    )?;
    emit(&report, cfg)
}

fn cmd_report(cfg: &RunConfig) -> CliResult<()> {
    let inputs = required(&cfg.inputs, "inputs")?;
    let reports = inputs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ExperimentReport::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    let csv = reports_to_csv(&reports);
    match &cfg.out {
        Some(p) => {
            crate::io_util::write_atomic(p, csv.as_bytes())?;
            println!("{}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// `--help` text of a subcommand (or of the top level for `None`).
pub fn help_text(subcommand: Option<&str>) -> Option<String> {
    use clap::CommandFactory;
    let mut cmd = Cli::command().term_width(100);
    cmd.build();
    let mut target = match subcommand {
        None => cmd,
        Some(name) => cmd.find_subcommand(name)?.clone(),
    };
    Some(target.render_help().to_string())
}

pub const SUBCOMMANDS: [&str; 9] = [
    "synth",
    "featurize",
    "tune",
    "train",
    "eval",
    "perturb",
    "holdout",
    "crossdata",
    "report",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let file = RunConfig {
            seed: Some(1),
            runs: Some(3),
            ..Default::default()
        };
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.runs, Some(3));
        let json = merged.to_json().unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), merged);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_command(["uqtab", "synth", "--bogus"]), 2);
        assert_eq!(run_command(["uqtab", "nosuch"]), 2);
        assert_eq!(run_command(["uqtab", "synth"]), 2);
        assert_eq!(run_command(["uqtab", "synth", "--help"]), 0);
        assert_eq!(
            run_command([
                "uqtab",
                "train",
                "--out",
                "/nonexistent/x",
                "--data",
                "/nonexistent/y",
                "--models",
                "Nope"
            ]),
            2
        );
        assert_eq!(
            run_command([
                "uqtab",
                "eval",
                "--data",
                "/nonexistent/y",
                "--models",
                "NN"
            ]),
            1
        );
    }

    #[test]
    fn group_specs_parse() {
        let g = parse_group_spec("old:0.2:1.5").ok().unwrap();
        assert_eq!(
            (g.tag.as_str(), g.prevalence, g.shift_scale),
            ("old", 0.2, 1.5)
        );
        assert!(parse_group_spec("old:0.2").is_err());
    }

    #[test]
    fn every_subcommand_has_help() {
        for s in SUBCOMMANDS {
            let h = help_text(Some(s)).unwrap();
            assert!(
                h.contains("--seed") && h.contains("--config") && h.contains("--jobs"),
                "{s}"
            );
        }
    }
}
