//! Seed derivation shared by every stage.
//!
//! Derived seeds must be identical across builds and platforms, so this uses
//! a fixed SplitMix64 finalizer instead of `std::hash`, whose output is not
//! guaranteed to be stable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Tags that separate the independent streams drawn from one user seed.
pub mod stream {
    pub const BANDIT: u64 = 0x0001;
    pub const STAGE1_ENV: u64 = 0x0002;
    pub const STAGE2: u64 = 0x0003;
    pub const ENV_DATA: u64 = 0x0004;
    pub const BASELINE: u64 = 0x0005;
    pub const GP_FIT: u64 = 0x0006;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with `index` into a new, well-separated seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.rotate_left(17) ^ 0xA076_1D64_78BD_642F)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
