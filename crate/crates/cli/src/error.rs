use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key '{key}'{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value for '{key}': {constraint}")]
    Invalid { key: String, constraint: String },
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown profile '{0}'")]
    UnknownProfile(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(lpad_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey { .. }
            | CliError::Invalid { .. }
            | CliError::Missing(_)
            | CliError::Syntax { .. }
            | CliError::UnknownProfile(_) => 2,
            _ => 1,
        }
    }
}

impl From<lpad_core::Error> for CliError {
    fn from(e: lpad_core::Error) -> Self {
        match e {
            lpad_core::Error::Config { key, constraint } => CliError::Invalid { key, constraint },
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
