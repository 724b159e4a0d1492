//! Reverse-mode automatic differentiation over dense tensors, with SGD and
//! Adam optimizers and a finite-difference gradient checker.
//!
//! A [`Tape`] records every primitive applied to [`Var`]s during a forward
//! pass. [`Tape::backward`] walks the record in reverse, accumulating
//! parameter gradients into a [`ParamStore`], after which an [`Optimizer`]
//! applies the update.

mod gradcheck;
mod optim;
mod params;
mod sparse;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Param, ParamId, ParamStore};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("variable belongs to a cleared tape")]
    StaleVar,
    #[error("optimizer step without a gradient for parameter `{0}`")]
    MissingGrad(String),
}
