//! Deterministic stream derivation from a single master seed.
//!
//! Every consumer of randomness (data synthesis, partitioning, parameter
//! init, minibatch sampling, mixture fitting, pool building, ...) gets its own
//! ChaCha8 stream keyed by `(master, purpose-tag, a, b)`, where `a`/`b` are
//! typically a round number and a client id. Streams are therefore mutually
//! independent: adding or removing one consumer never shifts the draws seen
//! by another, which is what makes algorithm-degradation identities (e.g.
//! proximal coefficient 0 versus plain averaging) bit-exact.
//!
//! The 32-byte ChaCha key is the little-endian concatenation of
//! `master`, `fnv1a64(tag)`, `a`, and `b`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alloc::vec::Vec;

/// FNV-1a over a byte string; used to fold purpose tags into seed words.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 32-byte ChaCha seed for the `(master, tag, a, b)` stream.
pub fn derive_seed(master: u64, tag: &str, a: u64, b: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a64(tag.as_bytes()).to_le_bytes());
    seed[16..24].copy_from_slice(&a.to_le_bytes());
    seed[24..32].copy_from_slice(&b.to_le_bytes());
    seed
}

/// The ChaCha8 stream for `(master, tag, a, b)`.
pub fn stream(master: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, tag, a, b))
}

/// A single `u64` sub-seed, for APIs that re-derive their own stream.
pub fn seed64(master: u64, tag: &str, a: u64, b: u64) -> u64 {
    fnv1a64(&derive_seed(master, tag, a, b))
}

/// One standard-normal draw.
#[inline]
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// `len` standard-normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| standard_normal(rng)).collect()
}

/// `count` indices drawn uniformly from `0..n` with replacement.
pub fn indices_with_replacement(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

/// `count` distinct elements of `items`, returned in ascending order.
pub fn subset_without_replacement(
    rng: &mut ChaCha8Rng,
    items: &[usize],
    count: usize,
) -> Vec<usize> {
    let count = count.min(items.len());
    let picked = rand::seq::index::sample(rng, items.len(), count);
    let mut out: Vec<usize> = picked.iter().map(|i| items[i]).collect();
    out.sort_unstable();
    out
}
