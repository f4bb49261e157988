//! Reference numerics: affine weight quantization, scaled dot-product and
//! multi-head attention, and the neural-memory read.
//!
//! Matrices store `f32`, the precision weights are shipped in. Every
//! computation widens to `f64` and rounds back only when a [`Matrix`] is
//! produced, so oracles written in plain `f64` loops agree to well under
//! `1e-6`.

mod attention;
mod matrix;
mod memory;
mod quantize;
mod report;

use thiserror::Error;

pub use attention::{
    attention, attention_weights, attention_with_shift, multi_head_attention, multi_head_attention_with_shift,
    softmax, AttentionParams, HeadWeights,
};
pub use matrix::Matrix;
pub use memory::{memory_weights, neural_memory_forward, MemoryContext, PositionTable};
pub use quantize::{dequantize, quantize, quantize_with_range, QuantizedTensor, SUPPORTED_BITS};
pub use report::{cosine_similarity, quant_error_report, AttentionProbe, BitsError, ErrorReport, QuantMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("matrix contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("unsupported bit width {0}; use 4 or 8")]
    UnsupportedBits(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid range: min {min} exceeds max {max}")]
    Range { min: f64, max: f64 },
    #[error("memory context is empty")]
    EmptyContext,
}
