//! Seeded inputs shared by the kernel benchmarks.

use bwn_core::{BinarizeState, PartitionSpec, Rng, Tensor, UMode};

/// Standard-normal tensor of `shape` from `seed`.
pub fn randn(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::randn(shape.to_vec(), 1.0, &mut Rng::new(seed)).expect("non-empty shape")
}

/// Latent weights of a dense `[fan_in, out]` layer grouped per neuron.
pub fn dense_state(fan_in: usize, out: usize, seed: u64) -> BinarizeState<f32> {
    let shape = [fan_in, out];
    let phi = Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), &mut Rng::new(seed)).expect("non-empty shape");
    BinarizeState::new(phi, PartitionSpec::per_neuron(&shape).expect("valid shape"), UMode::Identity).expect("matching partition")
}
