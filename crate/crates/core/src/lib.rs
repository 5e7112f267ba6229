//! Knowledge-graph fusion for joint biomedical entity and relation extraction.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`relweights`] scores `(subject, relation, object)` triples by embedding
//!    four masked sentences and comparing the unmasked sentence with the
//!    fourth vertex of the parallelogram spanned by the other three.
//! 2. [`gkstore`] trains a relational encoder on the normalized weights and
//!    freezes the resulting general-knowledge (GK) store of
//!    `initial ⊕ relational` entity vectors.
//! 3. [`taskfusion`] builds a task-specific graph over document mentions,
//!    links it to the frozen GK store, runs a fusion GCN and evaluates
//!    micro-F1 for entities and relations.
//!
//! Embeddings come from any [`embeddings::EmbeddingProvider`]: a deterministic
//! additive toy embedder for hermetic runs, or a KGXE file of precomputed
//! language-model vectors.

pub mod codec;
pub mod embeddings;
pub mod error;
pub mod gkstore;
pub mod jsonl;
pub mod numerics;
pub mod relweights;
pub mod seed;
pub mod synthetic;
pub mod taskfusion;

pub use error::{Error, Result};
