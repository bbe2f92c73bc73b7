//! Deterministic hashing used by the offline stub providers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn digest_hex(parts: &[&[u8]]) -> String {
    hex::encode(digest(parts))
}

pub(crate) fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub(crate) fn seed_of(parts: &[&[u8]]) -> u64 {
    let d = digest(parts);
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

pub(crate) fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_of(parts))
}

/// Pseudo-random vector in [-1, 1)^dim keyed by `parts`.
pub(crate) fn hashed_vector(parts: &[&[u8]], dim: usize) -> Vec<f64> {
    let mut rng = rng_for(parts);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Alphanumeric runs of `text`, in order.
pub(crate) fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
}
