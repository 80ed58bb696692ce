//! Minimal reverse-mode automatic differentiation over the fixed operation
//! set used by the networks: convolution, batchnorm, pooling, per-neuron
//! affine readout, elementwise nonlinearities, softmax/cross-entropy,
//! bilinear sampling and squared norms.
//!
//! Gradients can be requested for parameters and for input pixels alike;
//! leaves created with [`Graph::constant`] never receive a gradient.

mod conv;
mod graph;
mod scalar;
mod tensor;

pub mod check;

pub use graph::{BatchStats, Grads, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
