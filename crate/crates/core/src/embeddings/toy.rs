use std::collections::HashMap;
use std::sync::RwLock;

use rand::Rng;

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Vector};
use crate::seed::derive_seed;

pub const MASK_TOKEN: &str = "[MASK]";

/// Deterministic bag-of-tokens embedder: a sentence is the sum of its
/// whitespace tokens' vectors, and `[MASK]` is the zero vector.
///
/// Token vectors are drawn uniformly from `[-1, 1] / sqrt(dim)` by a
/// generator seeded from `(seed, token)`.
#[derive(Debug)]
pub struct ToyAdditiveEmbedder {
    dim: usize,
    seed: u64,
    tokens: RwLock<HashMap<String, Vector>>,
}

impl ToyAdditiveEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            seed,
            tokens: RwLock::new(HashMap::new()),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn draw(&self, token: &str) -> Vector {
        let mut rng = seeded_rng(derive_seed(self.seed, token));
        let scale = 1.0 / (self.dim as f64).sqrt();
        Vector::new(
            (0..self.dim)
                .map(|_| rng.random_range(-1.0..=1.0) * scale)
                .collect(),
        )
        .expect("finite by construction")
    }

    /// The vector of a single token.
    pub fn token_vector(&self, token: &str) -> Vector {
        if token == MASK_TOKEN {
            return Vector::zeros(self.dim);
        }
        if let Some(v) = self.tokens.read().expect("token table lock").get(token) {
            return v.clone();
        }
        let v = self.draw(token);
        self.tokens
            .write()
            .expect("token table lock")
            .entry(token.to_owned())
            .or_insert(v)
            .clone()
    }
}

impl EmbeddingProvider for ToyAdditiveEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let mut sum = Vector::zeros(self.dim);
        // Mask tokens are skipped rather than added so masked and unmasked
        // sentences agree bit-for-bit.
        for token in text.split_whitespace().filter(|t| *t != MASK_TOKEN) {
            sum.add_assign(&self.token_vector(token))?;
        }
        Ok(sum)
    }
}
