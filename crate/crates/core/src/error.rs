use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema: {0}")]
    Schema(String),

    #[error("data: {0}")]
    Data(String),

    #[error("unknown label '{0}'")]
    Label(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("model: {0}")]
    Model(String),

    #[error("knowledge base: {0}")]
    Knowledge(String),

    #[error("sequencing: {0}")]
    Sequencing(String),

    #[error("evidence: {0}")]
    Evidence(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("run directory {0} belongs to a different configuration")]
    RunConflict(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short, stable identifier printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Data(_) => "data",
            Error::Label(_) => "label",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::Knowledge(_) => "knowledge",
            Error::Sequencing(_) => "sequencing",
            Error::Evidence(_) => "evidence",
            Error::Backend(_) => "backend",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::RunConflict(_) => "run-conflict",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
