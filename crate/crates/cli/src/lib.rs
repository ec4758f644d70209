//! Command-line pipeline around the registration library: point-set file
//! IO, experiment protocols, and report serialization.

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod pointio;
pub mod report;

/// Errors surfaced by the command layer.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cfpnp::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Process exit code: 1 for usage, parse, and file problems, 2 for
    /// runs that break down numerically.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                cfpnp::Error::Parse { .. } | cfpnp::Error::InvalidConfig(_) => 1,
                _ => 2,
            },
            CliError::Io { .. } | CliError::Usage(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}
