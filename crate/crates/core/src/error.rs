//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SctgError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },

    #[error("target index {index} out of range for vocabulary of {vocab}")]
    IndexOutOfRange { index: usize, vocab: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("vocabulary mismatch: checkpoint has {checkpoint} entries, manifest vocabulary has {manifest}")]
    VocabMismatch { checkpoint: usize, manifest: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SctgError>;
