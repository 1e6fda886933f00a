//! Seeded randomness. Every stochastic operation takes an explicit
//! [`RandomSource`]; batch work derives one independent stream per element
//! from `(global_seed, index)` so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomSource = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer applied to the pair. Stable across platforms.
pub fn derive_seed(global_seed: u64, index: u64) -> u64 {
    let mut z = global_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived_rng(global_seed: u64, index: u64) -> RandomSource {
    rng_from_seed(derive_seed(global_seed, index))
}
