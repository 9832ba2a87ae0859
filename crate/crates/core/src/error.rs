use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("duplicate article id {0:?}")]
    DuplicateId(String),

    #[error("article id must be non-empty")]
    EmptyId,

    #[error("non-positive repost count {reposts} for ({user_id}, {article_id})")]
    NonPositiveReposts {
        user_id: String,
        article_id: String,
        reposts: i64,
    },

    #[error("references to unknown articles: {}", .0.join(", "))]
    DanglingReferences(Vec<String>),

    #[error("unknown article ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("articles without gold labels: {}", .0.join(", "))]
    Unlabeled(Vec<String>),

    #[error("invalid class index {class} (C = {classes})")]
    InvalidClass { class: usize, classes: usize },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("prediction file: {0}")]
    Predictions(String),

    #[error("non-finite score at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("empty table")]
    EmptyTable,

    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),

    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("seed {seed}: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.to_string(),
        }
    }

    /// Input problems the user can fix (bad files, bad parameters), as
    /// opposed to I/O failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } => false,
            Error::Run { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
