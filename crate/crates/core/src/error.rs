use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation, alignment and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the documented domain of an operation.
    #[error("domain error: {what} = {value} violates {bound}")]
    Domain {
        what: &'static str,
        value: f64,
        bound: String,
    },

    /// An iterative solver failed to bracket or converge.
    #[error("numeric failure in {context}: last bracket [{lo}, {hi}]")]
    Numeric {
        context: &'static str,
        lo: f64,
        hi: f64,
    },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An object was used in the wrong lifecycle state.
    #[error("invalid state: {0}")]
    State(&'static str),

    /// Malformed or inconsistent caller input.
    #[error("invalid input: {0}")]
    Input(String),

    /// Paired comparison over result sets that do not share the same seeds.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint format, version or environment-constant mismatch.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The heuristic aligner found no usable signal after the blind jump.
    #[error("alignment aborted: no signal above background ({counts} counts <= {threshold:.1})")]
    NoSignal { counts: u64, threshold: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, bound: impl Into<String>) -> Self {
        Error::Domain {
            what,
            value,
            bound: bound.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
