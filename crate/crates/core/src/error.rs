use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or layer shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values where finite input is required.
    #[error("numeric input error: {0}")]
    NumericInput(String),

    /// A numeric failure during computation (e.g. a NaN loss).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An operation was called in the wrong state, e.g. backward without forward.
    #[error("state error: {0}")]
    State(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs that must agree do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("checksum mismatch: header says {expected:#010x}, payload hashes to {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("path error: {}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input files or paths (as opposed to
    /// numeric failures or programming errors).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Consistency(_)
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::ChecksumMismatch { .. }
                | Error::Path { .. }
                | Error::Io(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::NumericInput(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
