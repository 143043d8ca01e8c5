use std::path::PathBuf;

use thiserror::Error;

use crate::graph::GraphError;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("cannot aggregate an empty set of {what}")]
    EmptyAggregate { what: &'static str },

    #[error("class {class} has no training rows")]
    EmptyClass { class: usize },

    #[error("training index set is empty")]
    EmptyTrainSet,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid graph spec: {}", join_graph_errors(.0))]
    Graph(Vec<GraphError>),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: row {row}, column '{column}': {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-finite value at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },

    #[error("split {split}: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Coarse error category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Graph(_) | Error::Toml(_) | Error::Unsupported(_) => {
                ErrorKind::Config
            }
            Error::NonFinite { .. } | Error::Dimension { .. } => ErrorKind::Numeric,
            Error::Split { source, .. } => source.kind(),
            Error::EmptyAggregate { .. }
            | Error::EmptyClass { .. }
            | Error::EmptyTrainSet
            | Error::Data(_)
            | Error::Cell { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }
}

fn join_graph_errors(errors: &[GraphError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
