//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is a `ChaCha8Rng` seeded from a base seed
//! mixed with a path of integers (step, prompt index, region index, ...). Streams
//! never depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags so that unrelated consumers of the same base seed never collide.
pub mod stream {
    pub const FIELD: u64 = 1;
    pub const COORDS: u64 = 2;
    pub const RASTER: u64 = 3;
    pub const PLACES: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const INIT: u64 = 7;
    pub const ROLLOUT: u64 = 8;
    pub const BATCH: u64 = 9;
    pub const SHUFFLE: u64 = 10;
    pub const WARMUP: u64 = 11;
    pub const INSPECT: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}
