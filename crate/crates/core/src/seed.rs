//! Deterministic sub-seed derivation.
//!
//! Every random stream in a run is keyed by the master seed plus a tuple of
//! small integers (purpose tag, round, client, ...), so results do not depend
//! on the order in which clients are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purpose tags.
pub mod stream {
    pub const INIT_GLOBAL: u64 = 1;
    pub const INIT_PERSONAL: u64 = 2;
    pub const PERSONAL_SGD: u64 = 3;
    pub const LOCAL_SGD: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const AVAILABILITY: u64 = 6;
    pub const DATA: u64 = 7;
    pub const LOCAL_ONLY: u64 = 8;
    pub const WEATHER: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn rng_for(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
