use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameters outside the configured space: {0}")]
    Domain(String),

    #[error("no Bragg peaks fall inside the time-of-flight grid (check difc against the grid range)")]
    NoPeaks,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("non-finite model output: {0}")]
    NonFinite(String),

    #[error("sampler acceptance rate {rate:.2e} after {trials} trials is below the floor")]
    SamplingStalled { trials: u64, rate: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cancelled")]
    Cancelled,

    #[error("report shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("task {task} failed: {source}")]
    Task {
        task: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn task(task: impl Into<String>, source: Error) -> Self {
        Error::Task {
            task: task.into(),
            source: Box::new(source),
        }
    }
}
