//! Dense numerical kernels with reverse-mode gradients and the Adam optimizer.

mod adam;
mod gradcheck;
mod ops;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, grad_check_per_param};
pub use ops::{affine, dropout_mask, l2_normalize, leaky_relu, LEAKY_SLOPE, NORM_EPS};
pub use sparse::SparseMatrix;
pub use tape::{backward_into, Gradients, Parameter, Tape, Var};
pub use tensor::Tensor;
