use emoc_autodiff::AutodiffError;
use emoc_core::CoreError;
use thiserror::Error;

/// Failure classes, one per process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("acceptance: {0}")]
    Acceptance(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::UnknownEmotion(_)
            | CoreError::InvalidIntensity(_)
            | CoreError::InvalidCell(_)
            | CoreError::CalmHasNoDirection
            | CoreError::InvalidSpec(_)
            | CoreError::InvalidTemperature(_) => CliError::Usage(msg),
            CoreError::NonFiniteLoss(_) | CoreError::ZeroNorm(_) => CliError::Numeric(msg),
            CoreError::Autodiff(a) => a.into(),
            _ => CliError::Data(msg),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        let msg = e.to_string();
        match e {
            AutodiffError::NonFiniteGradient { .. } | AutodiffError::Harness(_) => {
                CliError::Numeric(msg)
            }
            _ => CliError::Data(msg),
        }
    }
}
