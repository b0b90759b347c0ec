//! Named, reproducible random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Derive an independent generator for `(root, name, index)`.
///
/// Every consumer of randomness (simulation, each training step, each
/// evaluation trial) gets its own stream, so any command or step can be
/// replayed in isolation.
pub fn substream(root: u64, name: &str, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(seed)
}
