use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{context}, line {line}: {msg}")]
    Format {
        context: String,
        line: usize,
        msg: String,
    },

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("word {0:?} has a zero-norm vector")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("none of the tokens is in the vocabulary")]
    NoTokenFound,

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("nothing left to work with: {0}")]
    Empty(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            line,
            msg: msg.into(),
        }
    }
}
