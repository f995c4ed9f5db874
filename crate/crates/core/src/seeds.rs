//! Stable seed derivation and content digests.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed from a global seed and a label path
/// (stage name, repetition index, test id, ...).
pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// First 16 hex characters of the SHA-256 digest.
pub fn short_digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    hex::encode(&out[..8])
}

/// Full hex SHA-256 digest.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
