//! Experiment configs, assumption checks and the run driver behind the
//! `levyou` binary.

pub mod config;
pub mod run;
pub mod validate;

/// Errors that stop a command. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config or a model that violates a structural assumption.
    #[error("{0}")]
    Config(levyou::Error),
    /// Output could not be written or a run could not be scheduled.
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}
