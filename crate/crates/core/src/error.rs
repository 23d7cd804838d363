use std::path::PathBuf;

use crate::flowprior::FlowPrior;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("prior training diverged at epoch {epoch}")]
    PriorDiverged {
        epoch: usize,
        /// Parameters from the last epoch that finished with a finite loss.
        last_good: Box<FlowPrior>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown layout `{0}`")]
    UnknownLayout(String),

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (flags, config files, layouts)
    /// rather than by a failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::UnknownLayout(_))
    }
}
