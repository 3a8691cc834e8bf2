//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Exactly the operators the chart CNN and its loss need: 2-D convolution,
//! batch normalization, ReLU, 2x2 max pooling, global average pooling,
//! linear layers, dropout, class-weighted BCE on logits, plus `add` and
//! `reshape` glue. Training runs in `f32`; the gradient checker runs the same
//! code in `f64`.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{BatchNormMode, Graph, RunningStats, Var};
pub(crate) use graph::sigmoid;
pub use tensor::{Scalar, Tensor};
