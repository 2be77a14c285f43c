//! A small reverse-mode differentiation engine over dense `f64` matrices.
//!
//! Every forward operation on a [`Tape`] appends one record holding its
//! output value and input handles. [`Tape::backward`] walks the records in
//! reverse, visiting each once, and sums gradients across fan-out. Gradients
//! are only propagated into values that transitively depend on a trainable
//! leaf, so products with constant inputs (node features) never pay for the
//! input-side gradient.
//!
//! The primitive set is the one the attention layers need: matmul, add,
//! Hadamard product, LeakyReLU/ReLU/ELU, sigmoid, softplus, exp, log,
//! column concat and slice, row gather, segment softmax with a
//! differentiable temperature, segment sum, sum/mean, and a fused
//! cross-entropy.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use tape::{segment_softmax_values, Gradients, Segments, Tape, Var};
pub use tensor::Tensor;
