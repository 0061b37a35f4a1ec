//! Training binary-weight networks with exact gradients.
//!
//! Binarized layers keep real-valued latent parameters `phi`. Each forward
//! pass maps every parameter group (one dense neuron's fan-in, one conv
//! filter) through a sign-split, mean-centred, `exp(-zeta)`-shrunk transform
//! whose outputs approach exactly `+1` / `-1` as the sharpness `zeta` grows.
//! The transform is differentiable almost everywhere, so training is plain
//! backpropagation with no straight-through estimator. After training only
//! `sign(phi)` is kept and stored one bit per weight.
//!
//! Modules:
//! - [`tensor`]: dense tensors, matmul, convolution, pooling, reductions
//! - [`binarize`]: the group transform, partitions, alpha/zeta schedules
//! - [`nn`]: layers, graphs, LeNet5
//! - [`optim`]: SGD with momentum, decoupled weight decay and milestone schedules
//! - [`data`]: MNIST IDX and CIFAR-10 loaders, batching, augmentation
//! - [`export`]: bit-packed `.bwn` model files and multiplication-free inference
//! - [`gradcheck`]: finite-difference oracle and property batteries
//! - [`train`]: run configuration and the training loop

pub mod binarize;
pub mod data;
mod error;
pub mod export;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod rng;
pub mod tensor;
pub mod train;

pub use binarize::{BinarizeConfig, BinarizeState, PartitionSpec, UMode};
pub use error::{Error, Result};
pub use nn::{ForwardCtx, LayerGraph, WeightView};
pub use rng::Rng;
pub use tensor::{Element, Tensor};

/// Content hash of the crate sources this library was built from.
pub const SOURCE_HASH: &str = env!("BWN_SOURCE_HASH");
