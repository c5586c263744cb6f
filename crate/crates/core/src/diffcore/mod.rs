//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{softplus, Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;
