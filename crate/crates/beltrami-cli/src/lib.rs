//! Command implementations, settings resolution, and verification suites
//! behind the `beltrami` binary.

pub mod commands;
pub mod config;
pub mod oracles;
pub mod verify;

/// Errors are split by exit code: usage and input problems exit 2,
/// numerical and training failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(beltrami::Error),
    Numerical(beltrami::Error),
    VerifyFailed,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Input(e) => write!(f, "{e}"),
            CliError::Numerical(e) => write!(f, "{e}"),
            CliError::VerifyFailed => write!(f, "verification failed"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Numerical(_) | CliError::VerifyFailed => 1,
        }
    }
}

impl From<beltrami::Error> for CliError {
    fn from(e: beltrami::Error) -> Self {
        use beltrami::Error::*;
        match e {
            BlowUp { .. } | MaxStepsExceeded { .. } | NonFiniteGradient | SingularSystem(_)
            | OutsideBall { .. } => CliError::Numerical(e),
            _ => CliError::Input(e),
        }
    }
}
