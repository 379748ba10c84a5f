//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used for every stream.
pub type StreamRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of the stream seeded by `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator for sub-stream `index` of `parent`.
pub fn stream(parent: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(parent, index))
}
