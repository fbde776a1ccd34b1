//! Softmax-relaxed bitwidth search.
//!
//! Every quantizable layer `i` owns logits `α_i`, one per candidate. The
//! layer output is `Σ_j softmax(α_i)_j · B_j(op(x, Q_j(w_i)))`, the expected
//! payload `Σ_i n_i Σ_j softmax(α_i)_j bits_j` is the size objective, and
//! the validation loss enters through a multiplier that is either zero
//! (constraint met) or a large cap (constraint violated).

mod assignment;
mod driver;
mod relaxed;

pub use assignment::{apply_assignment, discretize, AssignedLayer, Assignment};
pub use driver::{fine_tune, search, SearchAbort, SearchConfig, SearchOutcome, SearchRecord, SearchState};
pub use relaxed::{
    alpha_step, expected_size, expected_size_value, mix_forward, size_objective, update_lambda, AlphaStep, ArchLogits,
};
pub use crate::nn::train::weight_step;
