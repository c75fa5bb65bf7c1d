use serde::Serialize;
use thiserror::Error;

use snerv_core::clustering::ClusterError;
use snerv_core::io::IoError;
use snerv_core::library::LibraryError;
use snerv_core::metrics::MetricError;
use snerv_core::phantom::PhantomError;
use snerv_core::probmodel::ProbError;
use snerv_core::reference::ReferenceError;
use snerv_core::unmixing::UnmixError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stale upstream output: {0}; rerun the upstream stage or pass --force")]
    UpstreamStale(String),
    #[error("{0}")]
    Failed(String),
}

/// Shape of the JSON object written to stderr on failure.
#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'static str,
    message: String,
    stage: &'a str,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingInput(_) => "MissingInput",
            CliError::ConfigInvalid(_) => "ConfigInvalid",
            CliError::UpstreamStale(_) => "UpstreamStale",
            CliError::Failed(_) => "Failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::ConfigInvalid(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::UpstreamStale(_) => 4,
        }
    }

    pub fn to_json(&self, stage: &str) -> String {
        serde_json::to_string(&ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            stage,
        })
        .expect("error report serializes")
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingInput(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<UnmixError> for CliError {
    fn from(e: UnmixError) -> Self {
        match e {
            UnmixError::InvalidConfig(_) => CliError::ConfigInvalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failed(e.to_string())
            }
        })*
    };
}

failed_from!(
    ClusterError,
    LibraryError,
    MetricError,
    PhantomError,
    ProbError,
    ReferenceError,
    std::io::Error,
    serde_json::Error
);
