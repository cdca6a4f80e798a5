use std::path::Path;

/// Failure of a CLI run, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or input files. Exit status 1.
    #[error("{0}")]
    Usage(String),
    /// A covariance could not be factorized or training failed. Exit status 2.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Numerical(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<mfgp_core::Error> for CliError {
    fn from(e: mfgp_core::Error) -> Self {
        if e.is_usage() {
            Self::Usage(e.to_string())
        } else {
            Self::Numerical(e.to_string())
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
