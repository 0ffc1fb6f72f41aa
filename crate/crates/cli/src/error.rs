use ssp_core::SspError;
use ssp_harness::HarnessError;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values. Exit code 1.
    Usage(String),
    /// Unreadable, missing or malformed files. Exit code 2.
    Format(String),
    /// The matcher or an evaluation protocol failed. Exit code 3.
    Pipeline(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Format(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Format(m) | CliError::Pipeline(m) => m,
        }
    }
}

impl From<SspError> for CliError {
    fn from(e: SspError) -> Self {
        match e {
            SspError::InvalidConfig(_) | SspError::InvalidTemperature(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Pipeline(inner) => inner.into(),
            HarnessError::InvalidEpisode { .. } => CliError::Pipeline(e.to_string()),
            HarnessError::Format { .. }
            | HarnessError::Io { .. }
            | HarnessError::Manifest { .. } => CliError::Format(e.to_string()),
            HarnessError::InvalidRatio { .. } | HarnessError::InvalidSpec(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}
