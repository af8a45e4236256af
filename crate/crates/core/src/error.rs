use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pipeline. Each variant carries the stage that
/// produced it so the CLI can report module-prefixed messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("ingest: {file}: record {index}: {message}")]
    Geometry {
        file: String,
        index: usize,
        message: String,
    },
    #[error("marginals: {0}")]
    Marginals(String),
    #[error("network: {0}")]
    Network(String),
    #[error("network: no path from node {from} to node {to}")]
    Unreachable { from: u64, to: u64 },
    #[error("synthesize: {0}")]
    Synthesize(String),
    #[error("calibrate: {0}")]
    Calibrate(String),
    #[error("validate: {0}")]
    Validate(String),
    #[error("vrpbench: {0}")]
    Vrp(String),
    #[error("config: {0}")]
    Config(String),
    #[error("pipeline: missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json: {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
