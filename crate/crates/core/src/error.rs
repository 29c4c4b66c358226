use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("no label for patient `{0}`")]
    MissingLabel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("all trials diverged (trials {0:?})")]
    AllTrialsDiverged(Vec<usize>),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("model container: {0}")]
    Format(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-parsable error lines and FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::MissingLabel(_) => "missing-label",
            Error::InvalidConfig(_) => "config",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non-finite",
            Error::SingleClass(_) => "single-class",
            Error::AllTrialsDiverged(_) => "diverged",
            Error::Schema(_) => "schema",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
        }
    }
}
