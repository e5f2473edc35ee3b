use thiserror::Error;

/// Errors produced by this crate.
///
/// Variants map onto process exit codes in the CLI: invalid arguments and
/// config problems are usage errors (2), file and layout problems are data
/// errors (3), non-finite numerics are numeric failures (4).
#[derive(Debug, Error)]
pub enum JavgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl JavgError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        JavgError::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        JavgError::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        JavgError::NumericFailure(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        JavgError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data/format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            JavgError::InvalidArgument(_) => 2,
            JavgError::Format { .. } | JavgError::Io { .. } => 3,
            JavgError::NumericFailure(_) | JavgError::TrainingFailure(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, JavgError>;
