use alloc::string::String;

/// Errors raised by the inference library.
///
/// Variants split into usage errors (bad input, caller's fault) and numerical
/// failures (a covariance matrix could not be factorized, training diverged).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "covariance matrix is not positive definite even with jitter {jitter:e} \
         (smallest eigenvalue estimate {min_eigenvalue:e})"
    )]
    NotPositiveDefinite { jitter: f64, min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// `true` for errors caused by invalid input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
