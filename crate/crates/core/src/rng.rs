//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer of randomness (spawn jitter, observation noise, message
//! drops) draws from its own stream so toggling one feature never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPAWN_STREAM: &str = "spawn";
pub const NOISE_STREAM: &str = "noise";
pub const DROP_STREAM: &str = "drop";

/// Stream keyed by `(seed, name, keys...)`.
pub fn substream(seed: u64, name: &str, keys: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for key in keys {
        hasher.update(key.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}
