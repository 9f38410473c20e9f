//! Stable 64-bit hashing.
//!
//! `std::hash` makes no stability promises across releases, so everything
//! that must be reproducible (embedding seeds, fixture digests) goes through
//! this FNV-1a implementation instead.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over a byte slice. Identical input yields an identical hash on
/// every platform and in every build.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash rendered as a fixed-width lowercase hex string, used as a request
/// digest in fixture files and error messages.
pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
