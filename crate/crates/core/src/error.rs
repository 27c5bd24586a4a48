use thiserror::Error;

use crate::compute::ComputeError;
use crate::corpus::CorpusError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("expected a {expected} model, got {actual}")]
    WrongModelKind { expected: &'static str, actual: String },
    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),
    #[error("latent codes do not match model configuration: {0}")]
    LatentMismatch(String),
    #[error("episode has no batches")]
    EmptyEpisode,
    #[error("meta-training with `{method}` needs at least 2 source domains, found {found}")]
    TooFewDomains { method: String, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::cli::CheckpointError),
    #[error("stage `{stage}` has not been run: missing {path}")]
    MissingStage { stage: &'static str, path: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
