//! Labelled, seeded random streams.
//!
//! Every stochastic draw in the crate goes through an [`RngStream`]. A stream
//! is identified by a 64-bit seed and a string label; the pair is hashed with
//! SHA-256 into a ChaCha8 key, so the draw sequence depends only on
//! `(seed, label)` and is identical across runs and platforms.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// A deterministic random stream keyed by `(seed, label)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            seed,
            label,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// A child stream whose label is `"{parent}/{suffix}"`.
    pub fn derive(&self, suffix: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.label, suffix))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Stable 64-bit hash of a sequence of string parts, used to derive per-run
/// seeds from structured identifiers.
pub fn hash_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
