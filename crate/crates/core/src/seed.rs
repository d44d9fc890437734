//! Stable seed derivation. Every random stream in the crate is a ChaCha8
//! generator whose seed is derived here, so outputs depend only on the
//! user-facing seed and the logical position of the draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with a stream index.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Combine a base seed with a string tag (dataset ids, rater ids).
pub fn mix_str(seed: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(tag.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    mix(seed, u64::from_le_bytes(word))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
