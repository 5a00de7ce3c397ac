//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Shapes must match exactly; the only implicit expansion is by scalar
//! constants (`scale`, `add_scalar`). Matrix primitives operate on rank-2
//! tensors.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{huber, Tape, Var};
pub use tensor::Tensor;
