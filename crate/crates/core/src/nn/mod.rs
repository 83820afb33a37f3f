//! Minimal differentiable network substrate: dense and DenseNet layers,
//! reverse-mode gradients, Adam.

mod activation;
mod adam;
pub mod gradcheck;
mod layer;
mod matrix;
mod network;

pub use activation::Activation;
pub use adam::{Adam, AdamConfig};
pub use layer::{Init, Layer};
pub use matrix::{gemm, Matrix, Op, Scalar};
pub use network::{mse, Gradients, Network, Tape};
