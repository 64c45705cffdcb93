//! Seed-keyed shared randomness.
//!
//! Every per-token exponential value is derived on demand from a keyed
//! pseudorandom function (SipHash-2-4 with the 128-bit seed as key), so the
//! vocabulary never has to be materialized. The same construction derives
//! per-trial and per-step seeds from a master seed, which keeps parallel
//! experiments independent of scheduling order.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher24;

use crate::types::TokenId;

const TAG_EXP: u8 = 0;
const TAG_DERIVE_LO: u8 = 1;
const TAG_DERIVE_HI: u8 = 2;
const TAG_RNG: u8 = 3;

/// Source of the per-token `u_j ~ Exp(1)` values shared by all teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharedRandomness {
    seed: u128,
}

impl SharedRandomness {
    pub fn new(seed: u128) -> Self {
        SharedRandomness { seed }
    }

    pub fn seed(&self) -> u128 {
        self.seed
    }

    /// Child randomness for `index` (a trial, a step, an attempt).
    pub fn derive(&self, index: u64) -> SharedRandomness {
        let lo = self.prf(TAG_DERIVE_LO, index) as u128;
        let hi = self.prf(TAG_DERIVE_HI, index) as u128;
        SharedRandomness::new(hi << 64 | lo)
    }

    /// A uniform value strictly inside (0, 1) for `token`.
    pub fn uniform(&self, token: TokenId) -> f64 {
        uniform_open(self.prf(TAG_EXP, token.0))
    }

    /// The unit-rate exponential value `u_j` for `token`; always finite and positive.
    pub fn exp(&self, token: TokenId) -> f64 {
        -self.uniform(token).ln()
    }

    /// A general-purpose RNG keyed by this seed, for the mechanism noise of one trial.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&self.prf(TAG_RNG, i as u64).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    fn prf(&self, tag: u8, value: u64) -> u64 {
        let mut h = SipHasher24::new_with_keys(self.seed as u64, (self.seed >> 64) as u64);
        h.write(&[tag]);
        h.write(&value.to_le_bytes());
        h.finish()
    }
}

/// Maps 64 random bits to the midpoint of one of 2^52 equal cells of (0, 1).
/// Every midpoint is exactly representable, so `-ln(U)` is finite and positive.
fn uniform_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Free-function form of [`SharedRandomness::exp`].
pub fn exp_from_seed(randomness: &SharedRandomness, token: TokenId) -> f64 {
    randomness.exp(token)
}
