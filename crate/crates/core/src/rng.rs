//! Seeded random number generation.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`),
/// seeded from a `u64` with `seed_from_u64`.
///
/// Independent sub-streams for different consumers (initialization, shuffling,
/// augmentation) come from [`Rng::fork`], which keeps the seed and selects a
/// different ChaCha stream, so drawing from one never perturbs another.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub const ALGORITHM: &'static str = "ChaCha8 (rand_chacha 0.9, seed_from_u64)";

    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator on stream `stream` of the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
