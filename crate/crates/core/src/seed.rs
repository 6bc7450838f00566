//! Hierarchical seed derivation: a run seed fans out into independent
//! sub-seeds per (round, purpose) so changing one knob leaves unrelated draws
//! untouched.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

/// Derive a sub-seed from `base`, a round number and a purpose tag.
pub fn derive(base: u64, round: u32, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng(base: u64, round: u32, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, round, purpose))
}
