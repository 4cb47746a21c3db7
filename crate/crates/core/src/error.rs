use thiserror::Error;

/// Errors produced by the sampler library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    /// A token id lies outside the vocabulary.
    TokenOutOfRange {
        /// Position in the sequence.
        position: usize,
        /// Offending token id.
        token: usize,
        /// Vocabulary size.
        vocab: usize,
    },
    #[error("validation failed: {0}")]
    /// An input failed a structural check.
    Validation(String),
    #[error("mask token at position {0} has no intensity")]
    /// A mask token appeared where a clean token is required.
    MaskToken(usize),
    #[error("time {0} is outside [0, 1]")]
    /// A diffusion time outside `[0, 1]`.
    TimeOutOfRange(f64),
    #[error("invalid argument: {0}")]
    /// An argument outside its domain.
    InvalidArgument(String),
    #[error("schedule is singular: alpha({0}) = 0")]
    /// The schedule vanishes where it must be invertible.
    Singularity(f64),
    #[error("configuration error: {0}")]
    /// An inconsistent or out-of-range configuration value.
    Config(String),
    #[error("degenerate posterior: {0}")]
    /// A distribution with no mass or no finite weight.
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    /// Array or sequence dimensions disagree.
    Shape(String),
    #[error("unsupported mode: {0}")]
    /// The requested mode is not available for this input.
    Unsupported(String),
    #[error("state space of {states} sequences exceeds the enumeration guard of {guard}")]
    /// Exhaustive enumeration would exceed the state guard.
    Capacity {
        /// Size of the state space.
        states: u128,
        /// Largest enumerable size.
        guard: u128,
    },
    #[error("malformed file: {0}")]
    /// A file does not follow the expected format.
    Format(String),
    #[error(transparent)]
    /// An underlying IO failure.
    Io(#[from] std::io::Error),
}

/// Result alias with [`Error`] as the default error type.
pub type Result<T, E = Error> = std::result::Result<T, E>;
