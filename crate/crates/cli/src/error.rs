use std::path::PathBuf;

use flowbundle::bundle::BundleError;
use flowbundle::circular::CircularError;
use flowbundle::cluster_graph::ClusterError;
use flowbundle::density::DensityError;
use flowbundle::flow_io::{DatasetError, FloError, SamplingError};
use flowbundle::models::ModelError;
use flowbundle::patch::PatchError;
use flowbundle::persistence::PersistenceError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {} ({hint})", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Analysis(String),
}

/// What goes to stderr as one JSON line when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Analysis(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::MissingArtifact { .. } => "MissingArtifact",
            CliError::Io { .. } => "IoError",
            CliError::Data(_) => "DataError",
            CliError::Analysis(_) => "AnalysisError",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

macro_rules! classify {
    ($variant:ident: $($t:ty),+) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::$variant(e.to_string())
            }
        })+
    };
}

classify!(Data: FloError, DatasetError, SamplingError);
classify!(Analysis: DensityError, PersistenceError, CircularError, BundleError, ClusterError, ModelError, PatchError);

pub type Result<T, E = CliError> = std::result::Result<T, E>;
