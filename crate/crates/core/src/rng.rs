//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (a fixed, portable
//! algorithm). Independent consumers of one user seed use different stream
//! numbers so that adding draws to one never shifts another.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator for `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A 64-bit seed derived from `seed` for the sub-task numbered `tag`.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    stream(seed, tag).next_u64()
}

/// A seeded shuffle of `0..n`.
pub fn permutation(n: usize, seed: u64, stream_id: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, stream_id));
    idx
}
