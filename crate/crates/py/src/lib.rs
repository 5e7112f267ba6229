//! Python bindings: embedding providers, relation weights and stores.

use std::path::PathBuf;

use kgfuse::embeddings::{EmbeddingProvider, FileEmbeddingStore, ToyAdditiveEmbedder};
use kgfuse::gkstore::GkStore;
use kgfuse::numerics::Vector;
use kgfuse::relweights::{self, Entity, RelationType, Schema, WeightedTriple};
use kgfuse::taskfusion;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

create_exception!(pykgfuse, KgfuseError, PyValueError, "Invalid input or file for kgfuse.");

fn err(e: kgfuse::Error) -> PyErr {
    match e {
        kgfuse::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => KgfuseError::new_err(other.to_string()),
    }
}

fn vector(values: Vec<f64>) -> PyResult<Vector> {
    Vector::new(values).map_err(err)
}

/// Bag-of-tokens embedder where `[MASK]` contributes nothing.
#[pyclass(name = "ToyEmbedder", frozen)]
struct ToyEmbedder {
    inner: ToyAdditiveEmbedder,
}

#[pymethods]
impl ToyEmbedder {
    #[new]
    #[pyo3(signature = (dim = 64, seed = 0))]
    fn new(dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: ToyAdditiveEmbedder::new(dim, seed).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn embed(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.embed(text).map_err(err)?.into_inner())
    }
}

/// Vectors keyed by text, read from a KGXE file.
#[pyclass(name = "EmbeddingStore", frozen)]
struct EmbeddingStore {
    inner: FileEmbeddingStore,
}

#[pymethods]
impl EmbeddingStore {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: FileEmbeddingStore::load(&path).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        self.inner.contains(id)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.iter().map(|(id, _)| id.to_owned()).collect()
    }

    fn embed(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.embed(text).map_err(err)?.into_inner())
    }

    /// Store metadata as a dict.
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(self.inner.metadata()).map_err(|e| PyValueError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (text,))
    }
}

/// Runs `f` with the provider behind a `ToyEmbedder` or `EmbeddingStore`.
fn with_provider<T>(obj: &Bound<'_, PyAny>, f: impl FnOnce(&dyn EmbeddingProvider) -> PyResult<T>) -> PyResult<T> {
    if let Ok(toy) = obj.cast::<ToyEmbedder>() {
        return f(&toy.get().inner);
    }
    if let Ok(store) = obj.cast::<EmbeddingStore>() {
        return f(&store.get().inner);
    }
    Err(PyTypeError::new_err("embedder must be a ToyEmbedder or an EmbeddingStore"))
}

/// A frozen knowledge store written by `kgfuse train-gk`.
#[pyclass(name = "GkStore", frozen)]
struct PyGkStore {
    inner: GkStore,
}

#[pymethods]
impl PyGkStore {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: GkStore::load(&path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn final_dim(&self) -> usize {
        self.inner.final_dim()
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.provenance().source.clone()
    }

    #[getter]
    fn collapse_warning(&self) -> bool {
        self.inner.provenance().collapse_warning
    }

    fn content_hash(&self) -> PyResult<String> {
        self.inner.content_hash().map_err(err)
    }

    fn ids(&self) -> Vec<String> {
        self.inner.nodes().map(|n| n.entity.id.clone()).collect()
    }

    /// Initial and relational embeddings concatenated.
    fn vector(&self, id: &str) -> PyResult<Vec<f64>> {
        self.inner
            .get(id)
            .map(|n| n.final_vec().into_inner())
            .ok_or_else(|| KgfuseError::new_err(format!("unknown entity {id:?}")))
    }
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    kgfuse::numerics::cosine(&vector(a)?, &vector(b)?).map_err(err)
}

/// The four sentences `(A, B, C, D)` for a triple.
#[pyfunction]
fn masked_sentences(subject: &str, relation: &str, object: &str) -> PyResult<(String, String, String, String)> {
    let m = relweights::build_masked_sentences(subject, relation, object).map_err(err)?;
    Ok((m.a, m.b, m.c, m.d))
}

/// Weight of `subject relation object` given surface forms.
#[pyfunction]
fn triple_weight(embedder: &Bound<'_, PyAny>, subject: &str, relation: &str, object: &str) -> PyResult<f64> {
    with_provider(embedder, |p| {
        let scored = relweights::triple_weight(
            p,
            &Entity::new(subject, subject),
            &RelationType::new(relation, relation),
            &Entity::new(object, object),
        )
        .map_err(err)?;
        Ok(scored.triple.weight)
    })
}

/// Returns `(best index, best weight, weights)` over `relations`, a list of
/// verbalizations; zero-norm relations have weight `None`.
#[pyfunction]
fn predict_relation(
    embedder: &Bound<'_, PyAny>,
    subject: &str,
    object: &str,
    relations: Vec<String>,
) -> PyResult<(usize, f64, Vec<Option<f64>>)> {
    let schema = Schema::new(
        relations
            .iter()
            .enumerate()
            .map(|(i, v)| RelationType::new(format!("r{i}"), v.as_str()))
            .collect(),
    )
    .map_err(err)?;
    with_provider(embedder, |p| {
        let pred =
            relweights::predict_relation(p, &Entity::new(subject, subject), &Entity::new(object, object), &schema)
                .map_err(err)?;
        Ok((pred.best, pred.best_weight, pred.weights))
    })
}

/// Groups `(s, r, o, weight)` tuples into `(s, r, [(o, weight)])` with
/// negatives clamped and each group summing to one.
#[pyfunction]
fn normalize_weights(triples: Vec<(String, String, String, f64)>) -> Vec<(String, String, Vec<(String, f64)>)> {
    let triples: Vec<WeightedTriple> = triples
        .into_iter()
        .map(|(subject, relation, object, weight)| WeightedTriple { subject, relation, object, weight })
        .collect();
    relweights::normalize_weights(&triples)
        .groups
        .into_iter()
        .map(|g| (g.subject, g.relation, g.entries))
        .collect()
}

/// `(precision, recall, f1)` from counts.
#[pyfunction]
#[pyo3(name = "prf")]
fn py_prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let m = taskfusion::prf(tp, fp, fn_);
    (m.p, m.r, m.f1)
}

#[pymodule]
fn pykgfuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KgfuseError", m.py().get_type::<KgfuseError>())?;
    m.add("MASK_TOKEN", kgfuse::embeddings::MASK_TOKEN)?;
    m.add_class::<ToyEmbedder>()?;
    m.add_class::<EmbeddingStore>()?;
    m.add_class::<PyGkStore>()?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(masked_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(triple_weight, m)?)?;
    m.add_function(wrap_pyfunction!(predict_relation, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(py_prf, m)?)?;
    Ok(())
}
