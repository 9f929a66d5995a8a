//! Named random streams derived from a single seed.
//!
//! Every consumer (init, shuffle, dropout, per-candidate seeds) draws from its
//! own ChaCha stream, so adding a consumer never shifts another's sequence.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// A child seed for `name`, e.g. one training seed per search candidate.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    stream(seed, name).next_u64()
}
