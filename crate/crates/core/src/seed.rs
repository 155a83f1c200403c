//! Deterministic seed derivation. Every random stream in a run is keyed by
//! the experiment seed plus a tuple of indices, so results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with each of `parts` in order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| {
            splitmix64(acc.rotate_left(23) ^ splitmix64(p ^ 0xd1b5_4a32_d192_ed03))
        })
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags, so streams keyed by the same indices stay independent.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const CAE_INIT: u64 = 2;
    pub const CNN_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SYNTH_SHAPES: u64 = 6;
    pub const SYNTH_ATTRS: u64 = 7;
    pub const SYNTH_IMAGE: u64 = 8;
}
