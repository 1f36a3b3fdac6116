//! Seeded draws shared by BDI selection and episode sampling.
//!
//! The generator is SplitMix64. Bounded draws reject raw values below
//! `2^64 mod n` and return `x mod n`; shuffles are partial Fisher–Yates
//! (`for i in 0..m { swap(i, i + below(len - i)) }`). Both are simple enough
//! to reproduce in any language from the seed alone.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SeededRng(SplitMix64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// First `m` positions of a Fisher–Yates shuffle of `0..len`.
    pub fn sample_indices(&mut self, len: usize, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..m.min(len) {
            let j = i + self.below((len - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(m.min(len));
        idx
    }
}

/// Mixes a batch seed and an index into an independent per-item seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = SeededRng::new(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut rng = SeededRng::new(1234567);
        let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(got, vec![6457827717110365317, 3203168211198807973, 9817491932198370423]);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(9);
        assert!((0..1000).all(|_| rng.below(7) < 7));
        assert_eq!(rng.below(1), 0);
    }

    #[test]
    fn full_sample_is_permutation() {
        let mut idx = SeededRng::new(3).sample_indices(10, 10);
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }
}
