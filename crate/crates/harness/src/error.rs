use std::path::PathBuf;

/// Errors produced by the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// A failure inside the sampler library.
    #[error(transparent)]
    Core(#[from] dlps_core::Error),

    /// An IO failure on a specific path.
    #[error("{path}: {source}")]
    Io {
        /// File or directory involved.
        path: PathBuf,
        /// Underlying failure.
        #[source]
        source: std::io::Error,
    },

    /// A malformed input file.
    #[error("{path}: {message}")]
    Parse {
        /// File being parsed.
        path: PathBuf,
        /// What was wrong.
        message: String,
    },

    /// An image with inconsistent dimensions or format.
    #[error("invalid image: {0}")]
    Image(String),

    /// An inconsistent experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two inputs that must have equal lengths do not.
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),

    /// An argument outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Result alias with [`HarnessError`] as the default error type.
pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
