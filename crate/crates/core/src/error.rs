use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A record sequence violates an ordering or range invariant.
    #[error("invalid record {index}: {message}")]
    InvalidRecord { index: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("out-of-order packet: ts {ts_us} us arrived after {last_ts_us} us")]
    OutOfOrder { ts_us: u64, last_ts_us: u64 },

    #[error("sampling probability {0} outside (0, 1]")]
    Probability(f64),

    #[error("significance level {0} outside (0, 1)")]
    Alpha(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
