//! Reverse-mode gradient engine over dense tensors.
//!
//! A [`Tape`] records forward primitives; [`Tape::backward`] replays them in
//! reverse to accumulate gradients for every differentiable leaf. All
//! arithmetic is double precision. The engine is deliberately small: rank-2
//! tensors at most, no broadcasting beyond what the model zoo needs, and a
//! built-in finite-difference auditor for every gradient path.

mod check;
mod scalar;
mod store;
mod tape;
mod tensor;

pub use check::{bind_all, finite_difference_check, FdReport};
pub use scalar::Val;
pub use store::ParamStore;
pub use tape::{Gradients, NodeId, NonFinite, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: String, lhs: String, rhs: String },
    #[error("invalid tensor: {0}")]
    BadShape(String),
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
