//! Dense matrices and the differentiable primitives the classifier needs.

mod loss;
mod matrix;
mod ops;

pub use loss::{logit_mse, softmax_cross_entropy, LossValue};
pub use matrix::Matrix;
pub use ops::{affine_backward, affine_forward, relu_backward, relu_forward, sgd_update, AffineGrads};

#[cfg(test)]
pub(crate) mod fd;
