use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for {len} objects")]
    IndexOutOfRange { index: usize, len: usize },

    /// A hyperparameter or configuration field violates its constraint.
    /// The message names the constraint, e.g. "K must be ≥ 1".
    #[error("{0}")]
    InvalidParam(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("partition too coarse: widest depth gap {widest_gap} between objects {from} and {to} is not below epsilon {epsilon}")]
    PartitionTooCoarse {
        widest_gap: f64,
        from: usize,
        to: usize,
        epsilon: f64,
    },

    #[error("degenerate path: objects {0} and {1} have the same depth")]
    DegeneratePath(usize, usize),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite {what}")]
    Diverged {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
}
