//! The end-to-end classifier: vocabulary, embedding + positional
//! encoding, transformer encoder stack, BiLSTM head, softmax classifier,
//! plus training, prediction, and binary checkpoints.

mod checkpoint;
mod classifier;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use classifier::{ClassifierModel, EncoderOutput, ModelConfig};
pub use train::{train, EpochStats, TrainConfig};
pub use vocab::{build_vocab, encode_text, tokenize, Vocab, CLS_ID, PAD_ID, UNK_ID};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("corpus has no text to build a vocabulary from")]
    EmptyCorpus,
    #[error("model config error: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab_len}")]
    TokenId { id: usize, vocab_len: usize },
    #[error("sample {index} is unlabeled")]
    UnlabeledSample { index: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
}
