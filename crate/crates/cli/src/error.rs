use std::fmt;

use serde_json::json;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad input or configuration (exit code 1).
    Validation(String),
    /// A fit or score could not be computed (exit code 2).
    Numerical(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.message() } }).to_string()
    }

    pub fn context(self, ctx: impl fmt::Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{ctx}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{ctx}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<wqes::Error> for CliError {
    fn from(e: wqes::Error) -> Self {
        match e {
            wqes::Error::Domain(_) | wqes::Error::LengthMismatch { .. } => CliError::Validation(e.to_string()),
            wqes::Error::ScoreUndefined { .. } | wqes::Error::OptimizationFailed(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
