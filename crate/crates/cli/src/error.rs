use thiserror::Error;

use riskdyn::RiskError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("required axioms failed: {0}")]
    AxiomFailed(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::AxiomFailed(_) => 4,
        }
    }

    /// Classifies an error raised while building objects from the config.
    pub fn at_load(err: RiskError) -> Self {
        CliError::Schema(err.to_string())
    }

    /// Classifies an error raised while running a task.
    pub fn at_run(err: RiskError) -> Self {
        match err {
            RiskError::Config(_) | RiskError::Json(_) => CliError::Schema(err.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}
