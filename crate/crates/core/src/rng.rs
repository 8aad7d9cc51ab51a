//! Seed derivation.
//!
//! Every stochastic component draws from its own ChaCha8 stream so results never depend
//! on scheduling order. A child seed is `splitmix64(parent ^ splitmix64(tag) ^ splitmix64(index + 1))`
//! and the resulting generator is `ChaCha8Rng::seed_from_u64(child)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags; distinct per consumer so that, e.g., market 3 of a panel and
/// bootstrap replicate 3 never share a stream.
pub mod tag {
    pub const MARKET: u64 = 0x4d41_524b;
    pub const REPLICATION: u64 = 0x5245_504c;
    pub const RESTART: u64 = 0x5253_5452;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const INTEGRATION: u64 = 0x494e_5447;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(parent: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, tag, index))
}
