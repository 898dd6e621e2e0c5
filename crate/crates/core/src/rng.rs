//! Seed derivation so every episode owns an independent, reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of stream identifiers.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stream tags keep seeds for different purposes apart.
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const VALUE_INIT: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const EVAL: u64 = 5;
}
