//! Deterministic seed derivation.
//!
//! Every random decision in a run is drawn from a stream derived from the
//! master seed plus a purpose tag and context ids (client, round, attempt).
//! Two runs with the same master seed therefore replay bit-identically on
//! any platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags namespacing the derived streams.
pub mod tags {
    pub const INIT: u64 = 0x01;
    pub const SERVER_TRAIN: u64 = 0x02;
    pub const CLIENT_TRAIN: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const DROPOUT: u64 = 0x05;
    pub const DURATION: u64 = 0x06;
    pub const PARTITION: u64 = 0x07;
    pub const KMEANS: u64 = 0x08;
    pub const SELECTION: u64 = 0x09;
    pub const DATA: u64 = 0x0a;
    pub const REPETITION: u64 = 0x0b;
    pub const SPLIT: u64 = 0x0c;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the master seed with a list of context values into one u64.
pub fn derive(master: u64, context: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &c in context {
        state = splitmix64(state ^ splitmix64(c));
    }
    state
}

/// A ChaCha stream for the given purpose and context.
pub fn stream(master: u64, context: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, context))
}
