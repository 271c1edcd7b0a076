//! Stable content hashing used for identifiers, tie-breaks, cache keys and
//! mock-backend seeding.

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]`
/// never collide.
pub fn digest_parts<S: AsRef<[u8]>>(parts: &[S]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        let bytes = part.as_ref();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hasher.finalize().into()
}

/// Lowercase hex of [`digest_parts`].
pub fn content_hash<S: AsRef<[u8]>>(parts: &[S]) -> String {
    hex::encode(digest_parts(parts))
}

/// First 64 bits of [`digest_parts`], little endian.
pub fn seed64<S: AsRef<[u8]>>(parts: &[S]) -> u64 {
    let d = digest_parts(parts);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Maps a 64-bit hash onto `[0, 1)` using the top 53 bits.
pub fn unit_from_u64(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// SHA-256 of raw bytes, hex encoded.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
