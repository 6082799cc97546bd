use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gating value u = {0} lies outside [0, 1]")]
    GatingOutOfRange(f64),

    /// A Gaussian transition with zero or negative variance, e.g. U sitting
    /// exactly on 0 or 1 where the channel noise vanishes.
    #[error("degenerate transition: {0}")]
    DegenerateTransition(String),

    #[error("weight collapse at step {step}: no particle has a finite positive weight")]
    WeightCollapse { step: usize },

    #[error("invalid resampling weights: {0}")]
    InvalidWeights(String),

    #[error("design matrix is rank deficient (scaled Gram eigenvalue ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("parameter ratio undefined: {0}")]
    RatioUndefined(&'static str),

    #[error("estimation aborted after {failures} failed iterations out of {iterations}: {last}")]
    EstimationAborted {
        failures: usize,
        iterations: usize,
        last: String,
    },

    #[error("bad data in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::Config(_)
            | Error::Data { .. }
            | Error::GatingOutOfRange(_)
            | Error::InvalidWeights(_) => 2,
            Error::DegenerateTransition(_)
            | Error::WeightCollapse { .. }
            | Error::RankDeficient { .. }
            | Error::RatioUndefined(_)
            | Error::EstimationAborted { .. } => 3,
            Error::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
