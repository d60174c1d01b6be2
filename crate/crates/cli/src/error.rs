use thiserror::Error;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Explainer(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Training(_) => 3,
            CliError::Explainer(_) => 4,
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn training(e: impl std::fmt::Display) -> Self {
        CliError::Training(e.to_string())
    }

    pub fn explainer(e: impl std::fmt::Display) -> Self {
        CliError::Explainer(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
