use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),

    #[error("{source_name}:{line}:{column}: {message}")]
    Parse { source_name: String, line: u64, column: usize, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] dpols_core::Error),
}

impl HarnessError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: err.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// How a subcommand finished; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// FAIL from the gate or an empty histogram.
    DefinedFailure,
    /// A certified bound did not hold.
    Violation,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::DefinedFailure => 2,
            Status::Violation => 3,
        }
    }
}

/// Exit code for errors that abort a run.
pub const ERROR_EXIT: u8 = 1;
