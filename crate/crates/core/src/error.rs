use std::path::PathBuf;

use thiserror::Error;

use crate::tabular::ColumnKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("ingestion error in table `{table}`: {message}")]
    Ingest { table: String, message: String },
    #[error("table `{table}` has columns not declared in the schema: {unknown:?}")]
    UnknownColumns { table: String, unknown: Vec<String> },
    #[error("column `{column}` has kind {actual:?}, expected {expected:?}")]
    Kind {
        column: String,
        expected: ColumnKind,
        actual: ColumnKind,
    },
    #[error("cannot parse date `{0}`")]
    Date(String),
    #[error("aggregation plan error: {0}")]
    Plan(String),
    #[error("feature assembly error: {0}")]
    Assembly(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate leaf: hessian sum {hess} + lambda {lambda} <= 0")]
    DegenerateLeaf { hess: f64, lambda: f64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("model file error: {0}")]
    Model(String),
    #[error("label error: {0}")]
    Labels(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
