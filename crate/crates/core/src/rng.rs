//! Seeded generator used for every random draw in the crate.
//!
//! ChaCha8 has a fixed, documented output stream, so a seed reproduces the
//! same instances and samples on every platform.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform_vector(&mut self, dim: usize, lo: f64, hi: f64) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| self.uniform(lo, hi)))
    }

    pub fn normal_vector(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| self.normal()))
    }

    /// Derives an independent stream, e.g. one per worker.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}
