//! Dense row-major tensors with a tape-based reverse-mode autodiff graph.
//!
//! The layer set is deliberately small: 2-D convolution, max/average
//! pooling, dense layers, batch normalization, ReLU, sigmoid, channel
//! concatenation, residual addition, and multi-label binary cross-entropy.
//! Everything is generic over [`Scalar`] so the same code runs in 32-bit for
//! training and in 64-bit for finite-difference gradient checks.

mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use kernels::conv::{Padding, Window};
pub use kernels::norm::BatchStats;
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
