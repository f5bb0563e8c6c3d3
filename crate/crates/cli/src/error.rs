use std::fmt;

/// Failure of a pipeline command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration.
    Config(String),
    /// A stage ran and hit a violated invariant or a failing computation.
    Invariant(String),
    /// An artifact from an earlier stage is absent.
    Missing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Missing(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violation: {m}"),
            CliError::Missing(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ecg_robust::Error> for CliError {
    fn from(e: ecg_robust::Error) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invariant(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invariant(format!("json: {e}"))
    }
}
