//! Deterministic RNG streams keyed by structured inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes length-prefixed parts so that `("ab", "c")` and `("a", "bc")` differ.
pub fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// An RNG stream derived from a domain label, a numeric seed and a key.
pub fn keyed_rng(domain: &str, seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest_parts(&[domain.as_bytes(), &seed.to_le_bytes(), key.as_bytes()]))
}

/// Lowercase hex SHA-256 of `data`.
pub fn hex_digest(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
