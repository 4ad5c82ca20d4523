use std::path::PathBuf;

use crate::judge::JudgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} {value} out of range ({bound})")]
    Range {
        what: &'static str,
        value: i64,
        bound: String,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{count} impression(s) lack a judge score (first rows: {rows:?}); run `annotate` first")]
    Unannotated { count: usize, rows: Vec<usize> },

    #[error("click rate undefined for score {score} at rank {rank}: no impressions and no smoothing")]
    UndefinedCell { score: u8, rank: u16 },

    #[error("score {score} has {impressions} rank-1 impressions, below min_support {min_support}")]
    InsufficientSupport {
        score: u8,
        impressions: u64,
        min_support: u64,
    },

    #[error("propensity estimation impossible: no score in the selected set has at least {min_support} rank-1 impressions")]
    EstimationImpossible { min_support: u64 },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss}); try a smaller learning rate")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("delta undefined: baseline `{method}` has zero {metric}")]
    UndefinedDelta { method: String, metric: &'static str },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Judge(#[from] JudgeError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Csv(_) => ErrorKind::Io,
            Error::Judge(JudgeError::Transport(_)) | Error::Judge(JudgeError::Timeout) => {
                ErrorKind::Io
            }
            Error::UndefinedCell { .. }
            | Error::EstimationImpossible { .. }
            | Error::TrainingDiverged { .. }
            | Error::UndefinedDelta { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}
