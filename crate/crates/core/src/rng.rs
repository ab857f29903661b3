//! SplitMix64 draws with a fixed, portable conversion to floats.
//!
//! Every draw consumes exactly one 64-bit output:
//! - `unit()`: `(next_u64 >> 11) * 2^-53`, uniform on `[0, 1)`
//! - `uniform(lo, hi)`: `lo + (hi - lo) * unit()`
//! - `below(n)`: `next_u64 % n`

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;

#[derive(Clone, Debug)]
pub struct Rng(SplitMix64);

impl Rng {
    /// Generator whose internal state starts at `seed`.
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::from_seed(seed.to_le_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.next_u64() % n
    }

    /// Inclusive integer range.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as u64) as i64
    }

    /// Gaussian draw. Not part of the portable data-generation contract.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("finite, non-negative std")
            .sample(&mut self.0)
    }

    /// Independent generator for a named sub-stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// Per-item seed: the first SplitMix64 output for state `root + index`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    Rng::new(root.wrapping_add(index)).next_u64()
}
