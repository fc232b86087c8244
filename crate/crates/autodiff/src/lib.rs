//! Dense CPU tensors with reverse-mode automatic differentiation.
//!
//! Every operation returns a new immutable [`Tensor`]; when an input needs a
//! gradient the result records its parents and a backward rule. Calling
//! [`Tensor::backward`] on a scalar walks that graph in reverse topological
//! order and adds the gradients into the trainable leaves.
//!
//! The element type is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it for the common cases.

mod error;
pub mod gradcheck;
mod ops;
mod param;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::nn::{Mask, MASK_LOGIT};
pub use param::Parameter;
pub use scalar::Real;
pub use tensor::{grad_enabled, no_grad, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Parameter64 = Parameter<f64>;
pub type Parameter32 = Parameter<f32>;
