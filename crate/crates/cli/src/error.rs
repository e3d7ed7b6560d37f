//! CLI error type carrying the process exit code: validation failures exit
//! with 1, runtime failures with 2.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: unreadable or malformed config, schema violations,
    /// out-of-range parameters, unusable record files.
    Validation(String),
    /// Failures after validation: computation errors or output I/O.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn validation(message: impl Into<String>) -> CliError {
    CliError::Validation(message.into())
}

pub fn runtime(message: impl Into<String>) -> CliError {
    CliError::Runtime(message.into())
}
