use thiserror::Error;

pub type Result<T> = std::result::Result<T, GmError>;

#[derive(Debug, Error)]
pub enum GmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid mixture weights: {0}")]
    Weights(String),

    #[error("covariance {component} is not positive semidefinite (smallest eigenvalue {eigenvalue:e})")]
    NotPsd { component: usize, eigenvalue: f64 },

    #[error("projected variance {value:e} is negative beyond tolerance")]
    NegativeVariance { value: f64 },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite data: {0}")]
    NonFinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("solver adapter failure: {0}")]
    Adapter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GmError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        GmError::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        GmError::Parameter(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        GmError::Parse {
            line,
            message: msg.into(),
        }
    }
}
