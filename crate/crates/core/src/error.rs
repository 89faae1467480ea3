use thiserror::Error;

use crate::autodiff::{AutodiffError, CheckpointError};
use crate::corpus::CorpusError;
use crate::embeddings::EmbeddingError;
use crate::featurizer::FeatureError;

/// Errors raised by the model, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid configuration: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("slot {0:?} has an empty value set")]
    EmptyValueSet(String),
    #[error("value set of slot {0:?} does not contain \"none\"")]
    MissingNone(String),
    #[error("slot {0:?} is not tracked by this checkpoint")]
    UnknownSlot(String),
    #[error("dialogue {dialogue:?} turn {turn}: gold value {value:?} of slot {slot:?} is not in the value set")]
    MissingLabel {
        dialogue: String,
        turn: usize,
        slot: String,
        value: String,
    },
    #[error("checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("reports were computed on different corpora")]
    CorpusMismatch,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
