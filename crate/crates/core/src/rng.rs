//! Seed derivation for reproducible random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by the run seed and
//! a small tuple of ordinals, so results never depend on scheduling or on how
//! many draws an earlier step consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StepRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a seed with ordinals into a single 64-bit key.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> StepRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

pub fn seeded(seed: u64) -> StepRng {
    ChaCha8Rng::seed_from_u64(seed)
}
