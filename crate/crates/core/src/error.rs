use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (datasets, records, streams).
    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("adapter bridge timed out after {0} ms")]
    BridgeTimeout(u64),

    #[error("adapter bridge protocol error: {0}")]
    Protocol(String),

    #[error("adapter bridge unavailable: {0}")]
    BridgeUnavailable(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for bridge problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BridgeTimeout(_) | Error::Protocol(_) | Error::BridgeUnavailable(_) => 3,
            _ => 2,
        }
    }
}
