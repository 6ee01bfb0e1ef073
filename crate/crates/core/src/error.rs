use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("index out of range: node {node} >= {num_nodes}")]
    NodeIndex { node: usize, num_nodes: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no trust structure: {0}")]
    NoTrustStructure(String),

    #[error("numerical fault in layer {layer}: {message}")]
    NumericalFault { layer: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient labels: {0}")]
    InsufficientLabels(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category, used by the CLI for its error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::EmptyGraph(_) => "empty-graph",
            Error::NodeIndex { .. } => "index",
            Error::Config(_) => "config",
            Error::NoTrustStructure(_) => "no-trust-structure",
            Error::NumericalFault { .. } => "numerical-fault",
            Error::Shape(_) => "shape",
            Error::InsufficientLabels(_) => "insufficient-labels",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
