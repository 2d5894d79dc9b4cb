//! Counter-based random streams.
//!
//! A stream is addressed by a master seed plus a short path of integer
//! coordinates (replicate index, experiment key, purpose tag, ...). The path
//! is folded through SplitMix64 into a ChaCha8 key, so any draw can be
//! regenerated independently of how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Purpose tags, kept distinct so that streams for different draws never
/// collide even when the other coordinates coincide.
pub mod purpose {
    pub const ARRIVALS: u64 = 1;
    pub const OUTCOMES: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const CI_BOOTSTRAP: u64 = 4;
    pub const DOMINANCE: u64 = 5;
    pub const CORPUS: u64 = 6;
    pub const PLUG_IN: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a 64-bit sub-seed from a master seed and a coordinate path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut word = derive_seed(master, path);
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&word.to_le_bytes());
        word = splitmix64(word);
    }
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit key for a string identifier.
pub fn id_key(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
