//! Errors of the run tooling and their process exit codes.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LexaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LexaError {
    #[error(transparent)]
    Core(#[from] lexa_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A user-supplied JSON document (config, goal file) failed to parse.
    #[error("{}: {source}", path.display())]
    Document {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    /// A file written by this tool is malformed or truncated.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

impl LexaError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// 2 for anything the caller can fix by changing inputs, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        use lexa_core::Error as E;
        match self {
            Self::Usage(_) | Self::Document { .. } => 2,
            Self::Core(E::Config { .. } | E::EnvMismatch { .. } | E::UnknownGoal(_)) => 2,
            _ => 3,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| LexaError::io(path, e))
    }
}
