use thiserror::Error;

/// Errors produced by model construction, evaluation, and recovery.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{kind} row {row} sums to {sum} (must be within 1e-6 of 1)")]
    RowSum {
        kind: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("{kind} row {row} entry {index} is negative: {value}")]
    NegativeEntry {
        kind: &'static str,
        row: usize,
        index: usize,
        value: f64,
    },

    #[error("discount factor {0} outside [0, 1)")]
    GammaOutOfRange(f64),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("trajectory has no states")]
    EmptyTrajectory,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{what} did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },

    #[error("operation needs at least {needed} actions, system has {got}")]
    NotEnoughActions { needed: usize, got: usize },

    #[error("non-finite value encountered in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error("document error: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> CoreError {
        CoreError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
