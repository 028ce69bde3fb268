use thiserror::Error;

/// Errors raised by model construction, measure evaluation and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("depth {depth} out of range (expected {expected})")]
    DepthOutOfRange { depth: usize, expected: String },

    #[error("time ordering violated: {0}")]
    TimeOrder(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed at node {node}: {reason}")]
    Solver { node: usize, reason: String },

    #[error("specification error at node {node}: {reason}")]
    Specification { node: usize, reason: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, RiskError>;

impl From<serde_json::Error> for RiskError {
    fn from(err: serde_json::Error) -> Self {
        RiskError::Json(err.to_string())
    }
}
