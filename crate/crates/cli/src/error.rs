use std::path::{Path, PathBuf};

use localcal::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("score report line {line}: {message}")]
    Report { line: usize, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(Error::Config(_)) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Core(Error::Io(_)) => EXIT_IO,
            CliError::Core(Error::Numeric(_)) => EXIT_NUMERIC,
            CliError::Report { .. } | CliError::Core(_) => EXIT_VALIDATION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
