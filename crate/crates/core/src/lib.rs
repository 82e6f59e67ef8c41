//! Training and inference for single-step spiking neural networks: step
//! activations with surrogate-gradient backpropagation, a multi-step LIF
//! reference simulator, batch-norm-to-threshold folding, and an energy
//! profiler for the resulting binary-signal networks.

pub mod data;
pub mod error;
pub mod graph;
pub mod lif;
pub mod rng;
pub mod surrogate;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
