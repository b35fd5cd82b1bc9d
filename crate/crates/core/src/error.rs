use std::path::PathBuf;

/// Errors produced anywhere in the planning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("obstacle density {0} outside [0, 0.5]")]
    InvalidDensity(f64),

    #[error(
        "no connected layout found after {attempts} attempts ({rows}x{cols}, density {density})"
    )]
    ConnectivityFailure {
        rows: usize,
        cols: usize,
        density: f64,
        attempts: usize,
    },

    #[error("scenario {index}: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid grid map: {0}")]
    InvalidMap(String),

    #[error("{free} free cells exceed graph capacity {capacity}")]
    CapacityExceeded { free: usize, capacity: usize },

    #[error("node slot {slot} out of range (n_free = {n_free})")]
    OutOfRange { slot: usize, n_free: usize },

    #[error("{n} nodes is too large for exhaustive search (max {max})")]
    TooLarge { n: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),

    #[error("degenerate batch: {positives} positive and {negatives} negative edges")]
    DegenerateBatch { positives: usize, negatives: usize },

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("no benchmark records")]
    EmptyRecords,

    #[error("failed to write checkpoint {path}: {source}")]
    CheckpointWriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format version mismatch: expected `{expected}`, found `{found}`")]
    FormatVersionMismatch { expected: String, found: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
