//! Seed derivation shared by every seeded operation.
//!
//! All randomness in the pipeline flows from an explicit user seed mixed with
//! stable string keys (part ids, rater ids, ...). The mixing is SHA-256 based so
//! results do not depend on the platform or on `std`'s hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a base seed and a sequence of string keys.
pub fn derive_seed(seed: u64, keys: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for key in keys {
        hasher.update((key.len() as u64).to_le_bytes());
        hasher.update(key.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A ChaCha8 generator keyed by `(seed, keys)`.
pub fn keyed_rng(seed: u64, keys: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
