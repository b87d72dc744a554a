//! Counter-keyed random streams.
//!
//! Every stochastic step derives its generator from `(seed, keys...)` instead
//! of sharing one sequential generator, so results do not depend on the order
//! in which a thread pool schedules work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep independent consumers of the same seed apart.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const RFF: u64 = 0x2;
    pub const SHUFFLE: u64 = 0x3;
    pub const TRAIN_MASKS: u64 = 0x4;
    pub const VALIDATION: u64 = 0x5;
    pub const PREDICT: u64 = 0x6;
    pub const SPLIT: u64 = 0x7;
    pub const HOLDOUT: u64 = 0x8;
    pub const EXPERIMENT: u64 = 0x9;
    pub const SYNTH: u64 = 0xa;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed and a key path into a single 64-bit value.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    state
}

/// A generator for the stream addressed by `(seed, keys)`.
pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    let base = derive_seed(seed, keys);
    let mut bytes = [0u8; 32];
    let mut s = base;
    for chunk in bytes.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
