use mim_spectral::Error as CoreError;
use thiserror::Error;

/// CLI failures, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unknown models, malformed config files. Exit code 1.
    #[error("{0}")]
    Input(String),
    /// A computation failed to converge or hit a degenerate case. Exit code 2.
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::UnknownModel(_)
            | CoreError::IndexDimension { .. }
            | CoreError::MissingSampler(_)
            | CoreError::InvalidDimensions(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::OutsideSupport { .. }
            | CoreError::CapExceeded { .. }
            | CoreError::NoJointBasis(_)
            | CoreError::BelowThreshold { .. }
            | CoreError::NotLearnable(_)
            | CoreError::InvalidArgument(_) => CliError::Input(msg),
            CoreError::SingularBlock { .. }
            | CoreError::Degenerate(_)
            | CoreError::Quadrature(_)
            | CoreError::Bracket(_)
            | CoreError::Diverged { .. }
            | CoreError::Asymmetric { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;
