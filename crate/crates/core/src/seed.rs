//! Seed schedules.
//!
//! Every Monte Carlo quantity draws from a ChaCha stream identified by a
//! `(seed, stream)` pair, so results never depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type OdosRng = ChaCha8Rng;

/// Stream tags that keep unrelated consumers of one seed apart.
pub mod tag {
    pub const OUTER: u64 = 0x0001;
    pub const PRIOR_POSTERIOR: u64 = 0x0002;
    pub const PLAN_SAMPLES: u64 = 0x0003;
    pub const PARTICLES: u64 = 0x0004;
    pub const TRUTH: u64 = 0x0005;
    pub const ROUND: u64 = 0x0006;
    pub const SAMPLE_SIZE: u64 = 0x0007;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(tag, index)` below `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> OdosRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child stream `index` of the generator seeded by `seed`.
pub fn child_rng(seed: u64, index: u64) -> OdosRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
