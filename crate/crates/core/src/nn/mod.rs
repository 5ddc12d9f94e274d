//! Self-contained numeric kernels: dense f64 matrices, the attention and
//! feed-forward transformer pieces, LSTM cells, cross-entropy, AdamW, the
//! slanted-triangular / discriminative learning-rate schedule, and a
//! finite-difference gradient checker.
//!
//! Everything here is a pure function of its inputs; training code owns
//! whatever mutation it needs.

mod gradcheck;
mod lstm;
mod matrix;
mod ops;
mod optim;
mod schedule;

pub use gradcheck::grad_check;
pub use lstm::{bilstm_forward, lstm_cell_step, LstmParams, LstmState};
pub(crate) use lstm::{lstm_cell_step_cached, LstmStepCache};
pub use matrix::Matrix;
pub use ops::{
    argmax, batch_cross_entropy, cross_entropy_loss, dropout_mask, layer_norm,
    multi_head_attention, position_wise_ffn, positional_encoding, scaled_dot_attention, softmax,
    AttentionParams, FfnParams, LayerNormParams, LAYER_NORM_EPS, PROB_FLOOR,
};
pub use optim::{adamw_step, AdamHyper, OptimizerState};
pub use schedule::{schedule_lr, ScheduleConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> NnError {
        NnError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
