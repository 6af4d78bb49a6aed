//! The 46-bit multiplicative congruential generator used by EP and FT.
//!
//! state' = 5^13 * state mod 2^46, u = state' * 2^-46. Because 2^46 divides
//! 2^64, a wrapping 64-bit multiply followed by a mask is exact.

use crate::constants::{LCG_BITS, LCG_MULTIPLIER};

use super::KernelError;

const MASK: u64 = (1 << LCG_BITS) - 1;
const SCALE: f64 = 1.0 / (1u64 << LCG_BITS) as f64;

/// A position in the generator's stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    state: u64,
    multiplier: u64,
    position: u64,
}

impl RandomStream {
    /// Stream at position 0. The seed must be odd and below 2^46.
    pub fn new(seed: u64) -> Result<Self, KernelError> {
        if seed == 0 || seed.is_multiple_of(2) || seed > MASK {
            return Err(KernelError::InvalidSeed(seed));
        }
        Ok(RandomStream { state: seed, multiplier: LCG_MULTIPLIER, position: 0 })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn multiplier(&self) -> u64 {
        self.multiplier
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.state = self.state.wrapping_mul(self.multiplier) & MASK;
        self.position += 1;
        self.state as f64 * SCALE
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for u in out {
            *u = self.next_uniform();
        }
    }

    /// Jump `k` steps ahead in O(log k).
    pub fn advance(&mut self, k: u64) {
        self.state = self.state.wrapping_mul(pow_mod(self.multiplier, k)) & MASK;
        self.position += k;
    }
}

/// multiplier^k mod 2^46 by square-and-multiply.
fn pow_mod(base: u64, mut k: u64) -> u64 {
    let mut acc = 1u64;
    let mut b = base & MASK;
    while k > 0 {
        if k & 1 == 1 {
            acc = acc.wrapping_mul(b) & MASK;
        }
        b = b.wrapping_mul(b) & MASK;
        k >>= 1;
    }
    acc
}

/// One generator step, returning the uniform and the advanced stream.
pub fn lcg_next(mut s: RandomStream) -> (f64, RandomStream) {
    let u = s.next_uniform();
    (u, s)
}

/// The stream from `seed` after `k` steps.
pub fn lcg_skip(seed: u64, k: u64) -> Result<RandomStream, KernelError> {
    let mut s = RandomStream::new(seed)?;
    s.advance(k);
    Ok(s)
}
