use std::fmt;
use std::io;
use std::path::Path;

use pdiff_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const TRAINING: i32 = 4;
    pub const NON_FINITE: i32 = 5;
    pub const EVAL_DEGENERATE: i32 = 6;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::USAGE, message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::new(exit::IO, format!("{}: {e}", path.display()))
    }

    /// Prefixes the message, keeping the exit code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self::new(self.code, format!("{what}: {}", self.message))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Io { .. } | CoreError::Format { .. } => exit::IO,
            CoreError::Diverged { .. } | CoreError::SingularNormalEquations { .. } | CoreError::InsufficientData(_) => exit::TRAINING,
            CoreError::NonFiniteLatent { .. } => exit::NON_FINITE,
            CoreError::Degenerate(_) => exit::EVAL_DEGENERATE,
            _ => exit::USAGE,
        };
        Self::new(code, e.to_string())
    }
}
