//! Dense row-major `f64` tensors with a small reverse-mode autodiff tape.
//!
//! Everything here is two-dimensional: vectors are `[1, n]` rows and scalars
//! are `[1, 1]`. The operation set is exactly what an attention
//! encoder-decoder routing policy needs, plus [`grad_check`] for validating
//! the backward passes against central differences.

mod check;
mod error;
pub mod kernels;
mod mask;
pub mod nn;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheck};
pub use error::TensorError;
pub use kernels::{matmul, softmax_rows};
pub use mask::Mask;
pub use tape::{Gradients, SoftmaxProbe, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
