use std::path::{Path, PathBuf};
use std::process::ExitCode;

use thiserror::Error;

/// Failures surfaced by a subcommand, each mapped onto a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Audio or feature input that cannot be used as given.
    #[error("{0}")]
    InputFormat(String),

    /// A model file that fails to parse or validate.
    #[error("{path}: {source}")]
    CorruptModel { path: PathBuf, source: binsed::Error },

    #[error("{0}")]
    Budget(String),

    #[error(transparent)]
    Core(#[from] binsed::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Other(String),
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT_FORMAT: u8 = 2;
pub const EXIT_CORRUPT_MODEL: u8 = 3;
pub const EXIT_SHAPE_MISMATCH: u8 = 4;
pub const EXIT_BUDGET: u8 = 5;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InputFormat(_) => EXIT_INPUT_FORMAT,
            CliError::CorruptModel { .. } => EXIT_CORRUPT_MODEL,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Core(e) if e.is_input_format() => EXIT_INPUT_FORMAT,
            CliError::Core(e) if e.is_corrupt_model() => EXIT_CORRUPT_MODEL,
            CliError::Core(e) if e.is_shape_mismatch() => EXIT_SHAPE_MISMATCH,
            CliError::Core(_) | CliError::Io { .. } | CliError::Other(_) => EXIT_FAILURE,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl From<std::fmt::Error> for CliError {
    fn from(e: std::fmt::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
