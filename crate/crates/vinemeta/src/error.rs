use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside the supported range or shape.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric input violates the domain of the requested function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Study data failed structural validation at ingestion.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Two objects that must be built from the same configuration disagree
    /// (e.g. a quadrature grid with the wrong shape for a parameter set).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The requested copula family does not support the operation.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// The optimizer could not start (e.g. non-finite likelihood at the
    /// initial point).
    #[error("initialization failed: {0}")]
    InitFailure(String),

    /// An oracle verification check failed.
    #[error("verification failed: {0}")]
    VerifyFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid_data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn init_failure(msg: impl Into<String>) -> Self {
        Error::InitFailure(msg.into())
    }
}
