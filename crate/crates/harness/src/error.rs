use std::io;
use std::path::{Path, PathBuf};

use filterforward_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn config(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub fn csv(path: impl AsRef<Path>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 2 for anything the user can fix by changing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Format { .. } | Error::Csv { .. } | Error::Config { .. } | Error::Usage(_) => 2,
            Error::Core { source, .. } => match source {
                CoreError::InvalidSpec(_)
                | CoreError::InvalidInput(_)
                | CoreError::InvalidCrop(_)
                | CoreError::SpecRejected { .. }
                | CoreError::DegenerateData(_)
                | CoreError::Generation(_) => 2,
                CoreError::Sequencing { .. }
                | CoreError::InvariantViolation(_)
                | CoreError::NotFound(_)
                | CoreError::UndefinedMetric(_) => 1,
            },
        }
    }
}

/// Attach context to core results.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, CoreError> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Core {
            context: context(),
            source,
        })
    }
}
