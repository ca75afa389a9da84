use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure categories used to pick CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid configuration or invalid arguments to an operation.
    Config,
    /// Unreadable or malformed input data, schema mismatches.
    Data,
    /// Numerical failure: divergence, degenerate weights, singular solves.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Carries every violation found, not just the first.
    #[error("invalid configuration:\n  {}", violations.join("\n  "))]
    Config { violations: Vec<String> },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn config(violations: Vec<String>) -> Self {
        Error::Config { violations }
    }

    pub fn config_one(msg: impl Into<String>) -> Self {
        Error::Config {
            violations: vec![msg.into()],
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } => ErrorCategory::Config,
            Error::Data(_) => ErrorCategory::Data,
            Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }

    /// Prefixes the message with fold context when an estimate fails inside
    /// a cross-fitting loop.
    pub fn with_fold(self, fold: usize) -> Self {
        match self {
            Error::Config { violations } => Error::Config { violations },
            Error::Data(m) => Error::Data(format!("fold {fold}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("fold {fold}: {m}")),
        }
    }
}
