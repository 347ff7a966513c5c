//! Seeded RNG streams. Every random draw in the crate comes from a ChaCha
//! stream derived from (seed, stream-name), so runs reproduce bitwise.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Independent deterministic stream for a named purpose.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Vector of standard-normal draws.
pub fn normal_vec(rng: &mut impl rand::Rng, len: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
