use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("inconsistent grids: {0}")]
    InconsistentGrids(String),

    #[error("empty snapshot list")]
    NoSnapshots,

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("partition mismatch")]
    PartitionMismatch,

    #[error("empty actuation set")]
    EmptySet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is within {h} of the domain boundary")]
    TooCloseToBoundary { h: f64 },

    #[error("divergent horizon: field not a.e. uniformly stable w.r.t. {source_set} ({detail})")]
    DivergentHorizon { source_set: String, detail: String },

    #[error("target outside reachable space: {0}")]
    Unreachable(String),

    #[error("ill-conditioned steering problem (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("malformed operator file: {0}")]
    OperatorFormat(String),
}

impl Error {
    /// True for failures that come from the mathematics of the problem rather
    /// than from bad input: unreachable targets and divergent horizons.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::DivergentHorizon { .. } | Error::Unreachable(_) | Error::IllConditioned { .. })
    }
}
