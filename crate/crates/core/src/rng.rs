//! Named random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a hash of
//! `(seed, purpose, index)`, so shuffling, ray sampling and dataset generation
//! never share state and each can be re-derived independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a purpose tag and an index into one 64-bit key.
pub fn stream_key(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    for b in purpose.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    let key = stream_key(seed, purpose, index);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key ^ (i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
