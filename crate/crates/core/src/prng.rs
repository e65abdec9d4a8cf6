//! SplitMix64 generator.
//!
//! Every stochastic step of the toolkit (mask sampling, weight init, dropout,
//! shuffling) draws from this generator so a seed fully determines the output
//! on every platform.

use crate::error::{invalid, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// Largest f64 strictly below 1.0.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)`: `word / 2^64`.
    pub fn next_f64(&mut self) -> f64 {
        let u = self.next_u64() as f64 / TWO_POW_64;
        // words within 2^10 of u64::MAX round up to 2^64 in f64
        u.min(ONE_MINUS_ULP)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(invalid!("uniform range [{lo}, {hi}] is empty"));
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> Result<usize> {
        if lo > hi {
            return Err(invalid!("integer range [{lo}, {hi}] is empty"));
        }
        let span = (hi - lo + 1) as f64;
        Ok(lo + ((self.next_f64() * span) as usize).min(hi - lo))
    }

    /// Standard normal draw via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_f64() * (i + 1) as f64) as usize;
            items.swap(i, j.min(i));
        }
    }
}

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
