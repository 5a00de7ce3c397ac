//! Seed derivation. Every random choice in the pipeline draws from a
//! [`SplitMix64`] generator whose seed is derived from the run seed plus a
//! named stream and an index, so results never depend on thread scheduling.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Seed for a named stream (`"dataset"`, `"folds"`, `"model"`, ...).
pub fn named_seed(base: u64, name: &str) -> u64 {
    // FNV-1a keeps the name hash stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(base, h)
}

pub fn rng_from(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}
