//! Pinned pseudo-random chain used for initial noise and toy-backend weights.
//!
//! The chain is fixed so that any implementation, in any language, produces the
//! same numbers:
//!
//! 1. `SplitMix64` seeded directly with the 64-bit seed.
//! 2. Uniforms in `[0, 1)` from the top 53 bits: `(x >> 11) * 2^-53`.
//! 3. Box-Muller on consecutive uniform pairs `(u1, u2)`:
//!    `r = sqrt(-2 ln(1 - u1))`, `theta = 2 pi u2`, emitting `r cos theta`
//!    then `r sin theta`.
//!
//! Arrays are filled in row-major order from this stream.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normal stream built on [`SplitMix64`] via Box-Muller.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    source: SplitMix64,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            source: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.source.next_f64();
        let u2 = self.source.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_gaussian()).collect()
    }
}

/// Derive a 64-bit seed from arbitrary bytes (first 8 bytes of SHA-256, little endian).
pub fn seed_from_bytes(bytes: &[u8]) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
