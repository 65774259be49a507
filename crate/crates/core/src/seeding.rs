//! Named random streams derived from a single 64-bit seed.
//!
//! Every consumer of randomness asks for a stream by name, e.g.
//! `stream_rng(seed, "dynamics-member-3")`. The stream seed is
//! `seed XOR u64::from_le_bytes(sha256(name)[..8])`, so adding a stream never
//! perturbs the others and skipped pipeline stages leave later stages intact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn name_hash(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn stream_seed(seed: u64, name: &str) -> u64 {
    seed ^ name_hash(name)
}

pub fn stream_rng(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name))
}
