//! Dense f64 tensors with a tape-based reverse-mode differentiator.
//!
//! The engine is deliberately small: it covers exactly the ops needed for a
//! transformer encoder–decoder with rotary positional encodings.
//! Everything runs single-threaded, so results are bit-reproducible.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use graph::{BinaryOp, Graph, Reduction, UnaryOp, Var};
pub use tensor::{trailing_broadcast_repeat, Result, Tensor, TensorError};
