//! Seedable deterministic randomness. One generator family (ChaCha8) so a
//! run's metadata can name the algorithm; same seed means same sequence.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

/// Deterministic RNG handle. Single-owner mutable state: do not share one
/// instance across concurrent tasks.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    /// Identifier recorded in run metadata.
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent deterministic stream for the same seed. Each pipeline
    /// stage draws from its own stream so stages cannot perturb each other.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Standard normal draw converted to the requested scalar type.
    pub fn normal<T: Scalar>(&mut self) -> T {
        let v: f64 = StandardNormal.sample(&mut self.inner);
        T::from_f64_c(v)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<E>(&mut self, xs: &mut [E]) {
        xs.shuffle(&mut self.inner);
    }
}
