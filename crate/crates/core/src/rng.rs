//! Seed derivation for the independent random streams used in training.
//!
//! Every stream is a pure function of the run seed and a tag path
//! (stream id, epoch, batch, ...), so resuming from a checkpoint needs no
//! generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT_TIME: u64 = 1;
pub const STREAM_INIT_FREQ: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_DROPOUT_TIME: u64 = 4;
pub const STREAM_DROPOUT_FREQ: u64 = 5;
pub const STREAM_CLUSTER: u64 = 6;
pub const STREAM_PROBE: u64 = 7;
pub const STREAM_NOISE: u64 = 8;
pub const STREAM_SPLIT: u64 = 9;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
