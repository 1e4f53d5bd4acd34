//! Seeded randomness. Every document gets its own ChaCha stream derived from
//! `(run seed, doc id)`, so parallel and serial runs draw identical noise.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type DocRng = ChaCha20Rng;

pub fn doc_rng(seed: u64, doc_id: &str) -> DocRng {
    let mut hasher = Sha256::new();
    hasher.update(b"dprecon/doc-stream/v1\0");
    hasher.update(seed.to_le_bytes());
    hasher.update(doc_id.as_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

pub fn seeded(seed: u64) -> DocRng {
    ChaCha20Rng::seed_from_u64(seed)
}
