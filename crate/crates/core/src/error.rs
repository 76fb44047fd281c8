use thiserror::Error;

/// Errors raised by the controller, the GP machinery and the environments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite or otherwise malformed data.
    #[error("data error: {0}")]
    Data(String),
    /// A factorization failed even after jitter escalation.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A configuration value violates its invariant; `key` names the field.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },
    /// The task environment failed mid-run.
    #[error("environment failure: {0}")]
    Environment(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
