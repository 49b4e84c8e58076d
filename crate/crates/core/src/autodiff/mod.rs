//! Reverse-mode automatic differentiation used for both weight gradients
//! (training) and input gradients (gradient-sign attacks).

mod kernels;
pub mod tape;
pub mod tensor;

pub use tape::{sigmoid, Tape, Var};
pub use tensor::{sign, Tensor};
