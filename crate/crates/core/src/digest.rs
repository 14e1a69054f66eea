//! Content digests and hash-derived seeds.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON form of `value`.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(&json)
}

/// 64-bit seed from a global seed and a sequence of labels. Each part is length-prefixed
/// so that `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(global_seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}
