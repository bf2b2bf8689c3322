//! Seeded random streams.
//!
//! Every random draw in the crate comes from [`Xoshiro256PlusPlus`] seeded
//! through SplitMix64 (`seed_from_u64`). Sub-streams (per tree, per node,
//! per replication) are derived by hashing the parent seed with a tag and
//! an index, so a stream never depends on scheduling order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Stream tags used when deriving sub-seeds.
pub mod tag {
    pub const TREE: u64 = 0x7472_6565;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const RETRAIN_DRAW: u64 = 0x6e65_7764;
    pub const NODE: u64 = 0x6e6f_6465;
    pub const LEAF: u64 = 0x6c65_6166;
    pub const FOLD: u64 = 0x666f_6c64;
    pub const STREAM: u64 = 0x7374_726d;
    pub const NOISE: u64 = 0x6e6f_6973;
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}
