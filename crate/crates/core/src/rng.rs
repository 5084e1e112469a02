//! Deterministic seeding.
//!
//! Every unit of random work draws from its own ChaCha stream whose seed is
//! derived from `(master, stream, index)`. Work can therefore be split across
//! threads without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream offsets for the task kinds that draw random numbers.
pub mod stream {
    pub const DATASET: u64 = 0x01;
    pub const MC_REFERENCE: u64 = 0x02;
    pub const TRAINING: u64 = 0x03;
    pub const FEM_STUDY: u64 = 0x04;
    pub const TRUNCATION_STUDY: u64 = 0x05;
    pub const TRAINSIZE: u64 = 0x06;
    pub const INIT: u64 = 0x07;
    pub const NOISE: u64 = 0x08;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream.rotate_left(40)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
