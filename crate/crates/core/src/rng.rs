//! Seed derivation. Every stochastic step draws from its own stream so that
//! toggling one component never shifts the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a base seed and a path of stream tags into one 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn stream(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PAIRING: u64 = 3;
    pub const VIEW_A: u64 = 4;
    pub const VIEW_B: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const PROTOTYPE: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const DATA: u64 = 9;
    pub const TRANSFORM: u64 = 10;
    pub const FINETUNE: u64 = 11;
}
