//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] through [`Var`] handles. A single
//! call to [`Tape::backward`] from a scalar yields the gradient of every
//! trainable leaf. The operation set is exactly what a patch-mixer
//! forecasting network needs: affine maps, batched products, layer
//! normalization, softmax and 1.5-entmax, gated units, a fused LSTM,
//! gathers for patching and convolution, and the Huber/MSE losses.

pub mod gemm;
mod lstm;
mod ops;
pub mod sparsemax;
mod tape;
mod tensor;

pub use ops::{gelu_scalar, huber_scalar, sigmoid_scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{strides, Tensor};
