use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid waveform file {path}: {message}")]
    Waveform { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("sampling rate {fs} Hz cannot resolve {f_max} Hz (Nyquist)")]
    Nyquist { fs: f64, f_max: f64 },

    #[error("non-finite value produced by op `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("missing artifact {path}: {what}")]
    MissingArtifact { path: PathBuf, what: String },
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
}

impl Error {
    /// Bad input or configuration, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Csv { .. }
                | Error::Parse { .. }
                | Error::InvalidEvent(_)
                | Error::Manifest(_)
                | Error::Waveform { .. }
                | Error::Config(_)
                | Error::Window(_)
                | Error::Nyquist { .. }
                | Error::Empty(_)
                | Error::MissingArtifact { .. }
        )
    }
}
