//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Ops record themselves on a per-forward graph; [`Tensor::backward`] walks
//! it once and accumulates gradients into parameters. Storage is row-major
//! and contiguous, every op copies. Allocation sizes and forward
//! multiply-accumulate counts are tallied per thread (see [`buffer`] and
//! [`counters`]).

mod autograd;
pub mod buffer;
pub mod counters;
mod error;
pub mod gradcheck;
mod ops;
mod tensor;

pub use buffer::Buffer;
pub use error::{Result, TensorError};
pub use ops::rotate_rows;
pub use tensor::{is_grad_enabled, no_grad, BackwardFn, Tensor};
