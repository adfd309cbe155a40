//! Event tokenizer and a primer-conditioned decoder-only transformer that
//! continues an Original with a Variation.

mod checkpoint;
mod dataset;
mod generate;
mod model;
pub mod tokenizer;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{
    build_training_example, encode_original, example_from_pair, example_from_segments, primer_tokens, split, Split,
    TrainingExample,
};
pub use generate::{
    continue_tokens, evaluate_against_original, evaluate_generation, generate, generate_from_notes, GenerateOptions,
    Generation, GenerationReport, Sampling, GENERATION_ROWS,
};
pub use model::{skew, DecodeState, Model, ModelConfig, TensorSpec};
pub use tokenizer::{decode, describe, encode, encode_notes, Decoded, DecodeWarning, Token, TokenId};
pub use train::{mean_loss, train, train_model, ProgressRecord, TrainConfig, TrainHooks};

use crate::corpus::CorpusError;

#[derive(Debug, Error)]
pub enum OverpaintError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("token id {0} is outside the vocabulary")]
    BadToken(TokenId),
    #[error("primer of {len} tokens leaves no room in max_len {max_len}")]
    PrimerTooLong { len: usize, max_len: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite at step {0}")]
    NonFinite(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, OverpaintError>;
