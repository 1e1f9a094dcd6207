use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiffError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("data length {len} does not match shape {shape:?}")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },

    #[error("log of non-positive value {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },

    #[error("division by zero at index {index}")]
    DivisionByZero { index: usize },

    #[error("pow({base}, {exponent}) is undefined at index {index}")]
    InvalidPower { index: usize, base: f64, exponent: f64 },

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("variable {0} is not a leaf")]
    NotALeaf(usize),

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperParameter(String),
}
