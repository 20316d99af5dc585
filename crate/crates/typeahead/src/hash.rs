//! FNV-1a, used where a stable, dependency-free, platform-independent hash
//! is needed: the by-session validation split and workspace manifest
//! fingerprints. Not for hash tables or anything security-sensitive.

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
