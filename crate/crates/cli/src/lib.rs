//! Command-line layer over the training core: run directories, the
//! checkpoint container, dataset file readers, metric plots and the
//! exit-code contract (0 success, 2 validation, 1 runtime).

pub mod checkpoint;
pub mod io;
pub mod plot;
pub mod runner;

/// Failure class deciding the process exit code. Everything wrong with the
/// user's inputs (files, flags, config contents) is a validation error;
/// everything that goes wrong after a run is underway is a runtime error.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(anyhow::anyhow!(msg.into()))
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(anyhow::anyhow!(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.message())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Writes an informational line to stdout, swallowing write errors so a
/// closed pipe (`kd-dlgan ... | head`) ends the program quietly instead of
/// panicking. File outputs never use this; their errors stay fatal.
pub fn say(line: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{}", line);
}

/// Extension to classify anyhow-compatible errors in one call.
pub trait Classify<T> {
    fn or_validation(self, context: &str) -> CliResult<T>;
    fn or_runtime(self, context: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_validation(self, context: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Validation(e.into().context(context.to_string())))
    }

    fn or_runtime(self, context: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into().context(context.to_string())))
    }
}
