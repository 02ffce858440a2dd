//! Stable, platform-independent hashing used for seeds and feature buckets.
//!
//! `std::hash::DefaultHasher` makes no cross-version stability promise, and
//! every seed derived here ends up baked into persisted artifacts.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over `bytes`, keyed by `seed`, followed by a SplitMix64 finalizer.
#[inline]
pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ mix64(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

/// One component of a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Int(u64),
    Str(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Int(v)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::Int(v as u64)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Str(v)
    }
}

/// Derive a child seed from an ordered list of parts.
///
/// Strings are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut h = 0x5eed_u64;
    for part in parts {
        h = match *part {
            SeedPart::Int(v) => mix64(h ^ mix64(v.wrapping_add(0x9e37_79b9_7f4a_7c15))),
            SeedPart::Str(s) => {
                let tagged = hash_bytes(s.len() as u64, s.as_bytes());
                mix64(h.rotate_left(17) ^ tagged)
            }
        };
    }
    h
}

/// Convenience macro over [`derive_seed`].
#[macro_export]
macro_rules! seed {
    ($($part:expr),+ $(,)?) => {
        $crate::hashing::derive_seed(&[$($crate::hashing::SeedPart::from($part)),+])
    };
}

/// Hex-encoded SHA-256 over a sequence of length-prefixed fields.
pub fn content_hash<'a, I>(fields: I) -> String
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
