//! Model registry, hyperparameter search, experiment protocols and reports.

pub mod protocols;
pub mod registry;
pub mod report;
pub mod search;

pub use protocols::{
    cross_dataset_experiment, evaluate_mortality, group_holdout_experiment,
    perturbation_experiment, prepare, run_perturbation, score_models, Prepared, DEFAULT_FACTORS,
    DEFAULT_RUNS,
};
pub use registry::{
    train_model, train_registry, Hyperparameters, Registry, TrainData, ORACLE_NAME,
};
pub use report::{
    reports_to_csv, write_report, ExperimentKind, ExperimentReport, GroupSummary, ResultEntry,
};
pub use search::{random_search, SearchOutcome, SearchSpace, TunedConfig};
