use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped so that the command-line front end can map them onto
/// a small set of exit codes (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {index} ({tag}): {reason}")]
    Composition {
        index: usize,
        tag: String,
        reason: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("lookup error: unknown layer `{0}`")]
    Lookup(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Parameter { .. } | Error::Lookup(_) => 2,
            Error::Diverged { .. } | Error::Solver(_) | Error::UndefinedAuc(_) => 4,
            Error::Data(_)
            | Error::Label(_)
            | Error::Shape(_)
            | Error::Composition { .. }
            | Error::State(_)
            | Error::Statistics(_)
            | Error::Format { .. }
            | Error::Io { .. } => 3,
        }
    }
}
