//! Dense `f64` tensors with reverse-mode differentiation.

pub mod fft;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    central_differences, finite_diff_check, max_relative_error, relative_error,
};
pub use tape::{softmax_slice, BackwardFault, Gradients, Tape, Var};
pub use tensor::Tensor;
