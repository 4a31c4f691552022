//! Deterministic RNG stream derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by
//! `(master_seed, tag, index)`: the seed is `master_seed` and the stream id is
//! `splitmix64(fnv1a64(tag) ^ splitmix64(index))`. Two streams with different
//! tags or indices never share state, so results do not depend on the order
//! in which independent work items run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for a `(tag, index)` pair.
pub fn stream_id(tag: &str, index: u64) -> u64 {
    splitmix64(fnv1a64(tag.as_bytes()) ^ splitmix64(index))
}

/// Derive an independent generator for `(master_seed, tag, index)`.
pub fn derive(master_seed: u64, tag: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(tag, index));
    rng
}

/// Derive a child seed (for APIs that take a plain `u64`).
pub fn derive_seed(master_seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(master_seed ^ stream_id(tag, index))
}
