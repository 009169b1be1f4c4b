//! Counter-style seeding: every random stream is addressed by a tuple of
//! integers, so results never depend on scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `(seed, a, b)`.
pub fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&a.to_le_bytes());
    key[16..24].copy_from_slice(&b.to_le_bytes());
    key[24..].copy_from_slice(b"snslab\0\0");
    ChaCha8Rng::from_seed(key)
}
