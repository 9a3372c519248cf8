//! Seeded random streams.
//!
//! Every random decision in the crate flows from one global seed through
//! named substreams: `stream(seed, "cgan/noise")`, `stream(seed, "data/split")`,
//! and so on. Adding a new consumer never perturbs an existing stream, and
//! the derivation is a fixed FNV-1a hash so it cannot drift with library
//! versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives the substream seed for `name` under the global `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = fnv1a(name.as_bytes());
    // Fold the global seed in byte by byte so that nearby seeds diverge.
    for b in seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A deterministic RNG for the named substream of `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}
