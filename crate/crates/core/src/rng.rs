//! Deterministic seeding utilities.
//!
//! Experiments derive per-point seeds from a master seed so that sweep
//! points can run concurrently while each point stays reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags for mutually independent noise sources.
pub const STREAM_INITIAL: u64 = 0x01;
pub const STREAM_PROCESS: u64 = 0x02;
pub const STREAM_OBSERVATION: u64 = 0x03;

/// SplitMix64 finalizer. Decorrelates nearby seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a stream tag.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix(master ^ splitmix(tag))
}

/// Deterministic RNG for a (seed, tag) pair.
pub fn stream_rng(master: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tag))
}
