//! Configuration, checkpoint format and command implementations behind the
//! `tspm` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{DataSource, RunConfig};

use tspm_core::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] tspm_core::Error),
    #[error("io: {0}")]
    Io(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 = invalid input, 3 = divergence, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::MissingInput(_) => 2,
            CliError::Core(tspm_core::Error::InvalidConfig { .. }) => 2,
            CliError::Core(tspm_core::Error::Data(DataError::Io { .. })) => 2,
            CliError::Core(tspm_core::Error::Diverged { .. }) => 3,
            _ => 1,
        }
    }
}
