//! Library backing the `freqseg` binary: config parsing, the checkpoint
//! format, image I/O, and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod imageio;

use thiserror::Error;

/// Command-level errors, each mapped to a process exit code:
/// 0 ok, 1 check/IO/integrity failure, 2 configuration error,
/// 3 numerical divergence.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error{}: {message}", line_suffix(.line))]
    Config { line: Option<usize>, message: String },

    #[error("check failed: {0}")]
    Check(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] freqseg_core::Error),
}

fn line_suffix(line: &Option<usize>) -> String {
    match line {
        Some(n) => format!(" (line {n})"),
        None => String::new(),
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config { line: None, message: message.into() }
    }

    pub fn at_line(line: usize, message: impl Into<String>) -> Self {
        CliError::Config { line: Some(line), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Check(_) | CliError::Integrity(_) | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                freqseg_core::Error::Argument(_) | freqseg_core::Error::Config(_) => 2,
                freqseg_core::Error::NonFinite { .. } => 3,
                _ => 1,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
