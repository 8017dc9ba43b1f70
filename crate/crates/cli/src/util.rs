//! Shared CLI plumbing: error-to-exit-code mapping and small helpers.

use bplf_core::FlowError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs the user can fix; exit 1.
    Usage(String),
    /// I/O, data or numeric failure at run time; exit 2.
    Runtime(String),
    /// A verification suite failed; exit 3.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            // Mistakes in what the user asked for, not in execution.
            FlowError::InvalidLabel { .. }
            | FlowError::UnknownLabelName { .. }
            | FlowError::ConditionMismatch { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult = Result<(), CliError>;
