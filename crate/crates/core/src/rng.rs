//! Seeded random streams. Every stochastic choice in the crate draws from a
//! ChaCha stream derived from `(seed, stream id)`, so results never depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream `id` of the run seeded by `seed`.
pub fn stream(seed: u64, id: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed) ^ id))
}

/// Stream ids reserved for the different consumers of a run seed.
pub mod purpose {
    pub const INIT: u64 = 0x1000_0000;
    pub const SHUFFLE: u64 = 0x2000_0000;
    pub const GRADCHECK: u64 = 0x3000_0000;
}
