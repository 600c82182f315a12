use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}:{line}: {kind} index {index} out of range (count {count})")]
    IndexOutOfRange {
        source_name: String,
        line: usize,
        kind: &'static str,
        index: i64,
        count: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing skin weights for vertex {0}")]
    MissingWeights(usize),

    #[error("invalid skin weights at vertex {vertex}: {reason}")]
    InvalidWeights { vertex: usize, reason: String },

    #[error("singular blended transform at vertex {vertex} (det = {det:e})")]
    SingularTransform { vertex: usize, det: f64 },

    #[error("non-finite energy in term {term}")]
    NonFiniteEnergy { term: &'static str },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("invalid UV atlas: {0}")]
    InvalidAtlas(String),

    #[error("file format: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::SingularTransform { .. } | Error::NonFiniteEnergy { .. } | Error::SolverFailure(_) => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
