//! Seed derivation. Every random stream in a run is a pure function of the
//! run seed and a short tag path, so work can be replayed from any epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags; stable across releases since they feed saved run seeds.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SOURCE_ORDER: u64 = 2;
    pub const TARGET_ORDER: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const FOLDS: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with each tag in order.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn derive_rng(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}
