use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A decoder with zero magnitude reached the distance metric.
    #[error("zero-norm parameter vector{}", fmt_index(.index))]
    ZeroNormVector { index: Option<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("parameter vector contains a non-finite value at position {position}")]
    NonFiniteValue { position: usize },

    #[error("vector of length {found} does not match manifest of length {expected}")]
    ManifestMismatch { expected: usize, found: usize },

    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),

    #[error("clusters overlap or are empty")]
    OverlappingClusters,

    #[error("need at least 2 decoders to cluster, got {0}")]
    TooFewDecoders(usize),

    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite loss at local step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("mismatched seed sets: {0}")]
    MismatchedSeeds(String),

    #[error("refusing to compare runs with different configurations: {0}")]
    MismatchedConfig(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

fn fmt_index(index: &Option<usize>) -> String {
    match index {
        Some(i) => format!(" at decoder index {i}"),
        None => String::new(),
    }
}
