//! Seed-stable random draws.
//!
//! All randomness goes through ChaCha8 seeded with `seed_from_u64`, whose
//! output stream is fixed by the `rand_chacha`/`rand_core` crates. The two
//! derived draws below are written out here rather than taken from `rand` so
//! that stored golden runs do not depend on its sampling internals.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..len` by 64×64→128 multiply-shift. `len` must be > 0.
    pub fn index(&mut self, len: usize) -> usize {
        assert!(len > 0, "index() on empty range");
        ((self.0.next_u64() as u128 * len as u128) >> 64) as usize
    }
}
