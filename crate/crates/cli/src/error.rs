use std::path::PathBuf;

use crossroads_core::dqn::DqnError;
use crossroads_core::nn::NnError;
use crossroads_core::sim::SimError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training aborted: {0}")]
    Aborted(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 2 configuration, 3 numerical abort, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Aborted(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl From<DqnError> for CliError {
    fn from(e: DqnError) -> Self {
        match e {
            DqnError::Config(m) => CliError::Usage(m),
            DqnError::Sim(SimError::Config(m)) => CliError::Usage(m),
            DqnError::Nn(NnError::Usage(m)) | DqnError::Nn(NnError::Shape(m)) => CliError::Usage(m),
            other => CliError::Aborted(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        DqnError::from(e).into()
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        DqnError::from(e).into()
    }
}
