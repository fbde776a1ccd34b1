//! Differentiable per-layer mixed-precision quantization search.
//!
//! Each quantizable layer carries one logit per quantization candidate. The
//! layer output is the softmax-weighted mixture of the batch-normalized
//! outputs of every candidate, which makes the bitwidth choice differentiable.
//! The search alternates weight updates on the training split with logit
//! updates that minimize expected model size under a validation-loss
//! constraint, then discretizes each layer to its most probable candidate.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
mod gemm;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod quant;
pub mod report;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
