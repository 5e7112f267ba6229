use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingProvider;
use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const KGXE_MAGIC: &[u8; 4] = b"KGXE";
pub const KGXE_VERSION: u16 = 1;

/// Free-form provenance stored as the JSON metadata block of a KGXE file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub source: String,
    pub pooling: String,
    pub format_version: u16,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl StoreMetadata {
    pub fn new(source: impl Into<String>, pooling: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            pooling: pooling.into(),
            format_version: KGXE_VERSION,
            extra: BTreeMap::new(),
        }
    }
}

/// Precomputed embeddings keyed by exact, case-sensitive id.
///
/// Vectors are held at `f32` precision (widened to `f64`) so that the
/// in-memory store always equals what is on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEmbeddingStore {
    dim: usize,
    metadata: StoreMetadata,
    ids: Vec<String>,
    vectors: Vec<Vector>,
    index: HashMap<String, usize>,
}

impl FileEmbeddingStore {
    pub fn new(dim: usize, metadata: StoreMetadata) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            metadata,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// Adds an entry, rounding it to `f32` precision.
    pub fn insert(&mut self, id: impl Into<String>, vector: &Vector) -> Result<()> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(Error::dim(self.dim, vector.dim()));
        }
        if self.index.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate embedding id {id:?}")));
        }
        let narrowed = Vector::from_f32(&vector.to_f32())?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(narrowed);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<&Vector> {
        self.index
            .get(id)
            .map(|&i| &self.vectors[i])
            .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        self.encode_into(&mut w)?;
        Ok(w.finish())
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) -> Result<()> {
        w.bytes(KGXE_MAGIC);
        w.u16(KGXE_VERSION);
        w.len_u32(self.dim)?;
        w.len_u32(self.ids.len())?;
        w.json(&self.metadata)?;
        for (id, v) in self.iter() {
            w.string(id)?;
            for x in v.to_f32() {
                w.f32(x);
            }
        }
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let store = Self::decode_from(&mut r)?;
        r.expect_end()?;
        Ok(store)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(KGXE_MAGIC)?;
        let version = r.u16()?;
        if version != KGXE_VERSION {
            return Err(Error::format(format!("unsupported KGXE version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::format("KGXE dimension is zero"));
        }
        let metadata: StoreMetadata = r.json()?;
        // Each record needs at least a length prefix and the payload.
        if count.saturating_mul(4 + 4 * dim) > r.remaining() {
            return Err(Error::format(format!(
                "truncated KGXE: {count} records of dim {dim} cannot fit in {} bytes",
                r.remaining()
            )));
        }
        let mut store = Self::new(dim, metadata)?;
        let mut buf = vec![0f32; dim];
        for _ in 0..count {
            let id = r.string()?;
            for x in buf.iter_mut() {
                *x = r.f32()?;
            }
            let v = Vector::from_f32(&buf)
                .map_err(|_| Error::format(format!("non-finite value in record {id:?}")))?;
            if store.index.contains_key(&id) {
                return Err(Error::format(format!("duplicate id {id:?}")));
            }
            store.index.insert(id.clone(), store.ids.len());
            store.ids.push(id);
            store.vectors.push(v);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes)
            .map_err(|e| match e {
                Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    /// Reads the `{"id": ..., "vec": [...]}` line format.
    pub fn from_jsonl(text: &str, metadata: StoreMetadata) -> Result<Self> {
        let records: Vec<JsonRecord> = crate::jsonl::parse(text)?;
        let dim = records
            .first()
            .map(|r| r.vec.len())
            .ok_or_else(|| Error::format("JSONL embedding file has no records"))?;
        let mut store = Self::new(dim, metadata).map_err(|e| Error::format(e.to_string()))?;
        for (line, rec) in records.iter().enumerate() {
            if rec.vec.len() != dim {
                return Err(Error::format(format!(
                    "record {} ({:?}) has dim {}, expected {dim}",
                    line + 1,
                    rec.id,
                    rec.vec.len()
                )));
            }
            let v = Vector::from_f32(&rec.vec)
                .map_err(|_| Error::format(format!("non-finite value in record {:?}", rec.id)))?;
            if store.contains(&rec.id) {
                return Err(Error::format(format!("duplicate id {:?}", rec.id)));
            }
            store.insert(rec.id.clone(), &v)?;
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let records: Vec<JsonRecord> = self
            .iter()
            .map(|(id, v)| JsonRecord {
                id: id.to_owned(),
                vec: v.to_f32(),
            })
            .collect();
        crate::jsonl::to_string(&records)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    vec: Vec<f32>,
}

impl EmbeddingProvider for FileEmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        self.lookup(text).cloned()
    }
}
