//! Library surface of the `epsim` binary: run-configuration parsing and
//! the experiment runner. Split out so integration tests can drive runs
//! in-process.

pub mod config;
pub mod runner;

/// Failures are split by who has to act: `Config` means the run file or
/// the flags are wrong (exit code 2), `Runtime` means the run itself broke
/// (exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}
