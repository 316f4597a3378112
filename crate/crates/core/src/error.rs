use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("degenerate column `{0}`: all values are equal")]
    DegenerateColumn(String),

    #[error("column index {index} out of range for {n_vars} columns")]
    IndexOutOfRange { index: usize, n_vars: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input is not centered: {0}")]
    NotCentered(String),

    #[error("predictor columns {0} and {1} are exact duplicates")]
    DuplicateColumns(usize, usize),

    #[error("predictor {0} is collinear with the active set")]
    Collinear(usize),

    #[error("predictor {0} never enters the active set")]
    NeverActive(usize),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("DAG contains a cycle through `{0}`")]
    Cycle(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
