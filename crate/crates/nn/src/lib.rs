//! A small, dependency-light neural-network engine in 64-bit floating point.
//!
//! The layer set is fixed: valid 2-D convolution, 2×2 average pooling, dense
//! (affine) layers, ReLU, inverted dropout, softmax, and a gated LSTM layer.
//! Every layer exposes an explicit forward pass that returns a cache and a
//! backward pass that consumes it, so networks built on top of this crate
//! compose reverse-mode gradients by hand. Optimization is Adam; parameters
//! persist through a versioned binary checkpoint format.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod dropout;
mod error;
pub mod gemm;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod pool;
mod tensor;

pub use error::{NnError, Result};
pub use tensor::{ensure_finite, Tensor};
