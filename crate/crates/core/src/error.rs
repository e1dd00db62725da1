use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("no feasible selection: {0}")]
    NoFeasibleSelection(String),

    #[error("construction failure: {0}")]
    ConstructionFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema validation failed: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }

    pub(crate) fn estimation(msg: impl Into<String>) -> Self {
        Error::EstimationFailure(msg.into())
    }

    pub(crate) fn construction(msg: impl Into<String>) -> Self {
        Error::ConstructionFailure(msg.into())
    }
}
