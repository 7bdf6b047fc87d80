use thiserror::Error;

/// Errors raised by the numerical core and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("empty integration interval at variable {index}")]
    EmptyInterval { index: usize },

    #[error("truncated normal interval mass underflows ({mass:e})")]
    IntervalMassUnderflow { mass: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of bounds for dimension {dim}")]
    IndexOutOfBounds { index: usize, dim: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("MCMC chain diverged: acceptance rate {rate:.4} over {steps} steps")]
    ChainDivergence { rate: f64, steps: usize },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::IntervalMassUnderflow { .. }
                | Error::ChainDivergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
