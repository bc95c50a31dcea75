//! Seed derivation and the generator used everywhere in the crate.
//!
//! All randomness is drawn from ChaCha20 (a counter-based stream cipher
//! generator). Child streams are obtained by hashing the parent seed with a
//! purpose tag, so that adding a new consumer never shifts the draws of an
//! existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

/// Derives a child seed from `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed from `(seed, tag, index)`, for per-fold or
/// per-replication streams.
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    derive_seed(derive_seed(seed, tag), &index.to_string())
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, tag: &str) -> Rng {
    rng_from(derive_seed(seed, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
        assert_ne!(derive_seed(7, "x"), derive_seed(7, "y"));
        assert_ne!(derive_seed(7, "x"), derive_seed(8, "x"));
        assert_ne!(derive_indexed(1, "fold", 0), derive_indexed(1, "fold", 1));
    }

    #[test]
    fn child_streams_reproduce() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(child_rng(3, "t"), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(child_rng(3, "t"), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }
}
