//! Seeded Gaussian noise.
//!
//! Every random draw in the crate goes through [`NoiseSource`], which wraps a
//! ChaCha stream cipher generator. ChaCha output is specified independently
//! of platform and word size, so a `(seed, stream)` pair always produces the
//! same variates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Deterministic source of independent standard normal variates.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent sub-stream of `seed`. Used to give every trajectory of a
    /// Monte Carlo batch its own reproducible noise, so that two estimators
    /// run on the same `(seed, stream)` pairs share common random numbers.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.standard_normal();
        }
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
