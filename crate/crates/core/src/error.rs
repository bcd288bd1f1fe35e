use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps onto one of the CLI exit codes through [`UrpError::exit_code`].
#[derive(Debug, Error)]
pub enum UrpError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema version mismatch at line {line}: expected {expected:?}, found {found:?}")]
    Version {
        line: usize,
        expected: String,
        found: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sequence of length {len} exceeds the context limit {limit}")]
    Capacity { len: usize, limit: usize },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("refusing to proceed: {0}")]
    Refused(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = UrpError> = std::result::Result<T, E>;

impl UrpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UrpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            UrpError::Config(_) | UrpError::Refused(_) => 2,
            UrpError::Numeric(_) | UrpError::Capacity { .. } => 4,
            UrpError::Domain(_)
            | UrpError::Parse { .. }
            | UrpError::Version { .. }
            | UrpError::Lookup(_)
            | UrpError::Data(_)
            | UrpError::Io { .. } => 3,
        }
    }
}
