use std::path::{Path, PathBuf};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("{}, line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("output check failed: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Core(#[from] pfa::Error),
}

impl HarnessError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) => match e {
                pfa::Error::Unreachable { .. } => EXIT_UNREACHABLE,
                pfa::Error::NotPsd { .. }
                | pfa::Error::RankDeficient { .. }
                | pfa::Error::ZeroEigenvalue { .. } => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            },
            HarnessError::Inconsistent(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}
