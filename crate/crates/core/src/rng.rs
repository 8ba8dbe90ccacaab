//! Seeded, splittable random source shared by every stochastic step.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded with `seed_from_u64`
//! (PCG32 key expansion, as documented by `rand_core`). Independent
//! sub-streams are addressed by ChaCha's 64-bit stream id:
//! `stream = (purpose << 32) | index`. Bounded integers use Lemire's
//! multiply-and-reject method on `next_u64`, so the sequence of draws is
//! fully specified by this file and can be reproduced in any language.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Recorded in model files so ports know how sampling was driven.
pub const PRNG_ALGORITHM: &str = "chacha8/seed_from_u64/stream=(purpose<<32)|index/lemire-u64";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    ColumnSample = 1,
    Goss = 2,
    Folds = 3,
    Synthetic = 4,
}

pub struct SplitRng {
    inner: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(seed: u64, purpose: Purpose, index: u32) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((purpose as u64) << 32) | index as u64);
        SplitRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let product = (self.next_u64() as u128) * (bound as u128);
            if (product as u64) >= threshold {
                return (product >> 64) as u64;
            }
        }
    }

    /// Uniform float in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `count` distinct elements of `pool` drawn without replacement, in draw
    /// order (partial Fisher-Yates from the front).
    pub fn sample<T: Copy>(&mut self, pool: &[T], count: usize) -> Vec<T> {
        let mut scratch = pool.to_vec();
        let count = count.min(scratch.len());
        for i in 0..count {
            let j = i + self.below((scratch.len() - i) as u64) as usize;
            scratch.swap(i, j);
        }
        scratch.truncate(count);
        scratch
    }
}
