use std::path::PathBuf;

use thiserror::Error;

use crate::data::SampleId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot inject {needed} noisy pairs, only {available} non-interacted pairs exist")]
    Capacity { needed: usize, available: usize },

    #[error("sample {0:?} has no loss history")]
    NoHistory(SampleId),

    #[error("survival count {d} must exceed sigma2 {sigma2}")]
    InvalidBound { d: u32, sigma2: f64 },

    #[error("sample {sample:?} already marked as retained in epoch {epoch}")]
    DoubleSurvival { sample: SampleId, epoch: u32 },

    #[error("relabel threshold needs at least one bound")]
    EmptyBounds,

    #[error("no users with {0} interactions to evaluate")]
    NoEvalUsers(&'static str),

    #[error("cannot aggregate reports: {0}")]
    Aggregate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
