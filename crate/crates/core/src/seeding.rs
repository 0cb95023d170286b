//! Seeded randomness. Every artifact records the `u64` seed it was drawn
//! with; child seeds are derived by hashing so that adding a new consumer
//! never shifts the stream of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// The generator behind every random draw in the crate (ChaCha20, rand_chacha 0.9).
pub type LabRng = ChaCha20Rng;

/// Identifies the generator in manifests.
pub const RNG_NAME: &str = "chacha20/rand_chacha-0.9";

pub fn rng(seed: u64) -> LabRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A child seed for `label`, stable across releases.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}
