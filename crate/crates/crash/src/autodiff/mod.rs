//! Self-contained reverse-mode autodiff: dense f64 tensors, a Wengert tape of
//! primitive ops (including a differentiable per-channel 2-D DFT), Adam, and
//! a central-difference gradient checker.

mod adam;
mod dft;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckError};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ComplexTensor, Tensor};

pub(crate) use dft::dft2 as dft2_raw;
