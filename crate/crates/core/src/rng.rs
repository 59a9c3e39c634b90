//! Seeded pseudo-randomness.
//!
//! Every random draw in the crate goes through [`SimRng`], a xoshiro256++
//! generator seeded via SplitMix64 (`seed_from_u64`). Its output stream is
//! fixed across platforms, which the reproducibility tests rely on.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Fisher-Yates shuffle with the crate generator.
pub fn shuffle<T>(rng: &mut SimRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
