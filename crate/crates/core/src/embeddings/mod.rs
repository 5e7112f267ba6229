//! Text-to-vector providers and the KGXE embedding file format.

mod store;
mod toy;

pub use store::{FileEmbeddingStore, StoreMetadata, KGXE_MAGIC, KGXE_VERSION};
pub use toy::{ToyAdditiveEmbedder, MASK_TOKEN};

use std::sync::Arc;

use crate::error::Result;
use crate::numerics::Vector;

/// Maps text to a fixed-dimension vector. Repeated calls with the same text
/// return bit-identical vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vector>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        (**self).embed(text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        (**self).embed(text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        (**self).embed(text)
    }
}

/// Returns the same vector for every input.
#[derive(Debug, Clone)]
pub struct ConstantProvider {
    vector: Vector,
}

impl ConstantProvider {
    pub fn new(vector: Vector) -> Self {
        Self { vector }
    }
}

impl EmbeddingProvider for ConstantProvider {
    fn dim(&self) -> usize {
        self.vector.dim()
    }

    fn embed(&self, _text: &str) -> Result<Vector> {
        Ok(self.vector.clone())
    }
}

/// Multiplies another provider's output by a constant factor.
#[derive(Debug, Clone)]
pub struct ScaledProvider<P> {
    inner: P,
    factor: f64,
}

impl<P> ScaledProvider<P> {
    pub fn new(inner: P, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for ScaledProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        self.inner.embed(text)?.scale(self.factor)
    }
}
