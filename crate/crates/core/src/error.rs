use thiserror::Error;

/// Errors produced by the head operators, tensor helpers and the cost model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeadError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid attention mask value {value} at flat index {index}")]
    InvalidMask { index: usize, value: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tile config: {0}")]
    InvalidConfig(String),

    #[error("size overflow while computing {0}")]
    Overflow(&'static str),

    #[error("allocation of {requested} bytes exceeds cap ({live} live of {cap})")]
    OutOfMemory {
        requested: usize,
        live: usize,
        cap: usize,
    },
}

pub type Result<T, E = HeadError> = std::result::Result<T, E>;
