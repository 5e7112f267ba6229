//! Synthetic knowledge graphs and task corpora for end-to-end runs.
//!
//! Entity `i` has type `i mod (R + 1)`; relation `k` links type `k` subjects
//! to type `k + 1` objects. Every document sentence verbalizes one fact as
//! `subject verb object.` Training sentences cycle through all facts so every
//! entity is seen; development sentences draw facts at random and replace
//! each mention by the entity's alias with probability `alias_rate`. Aliases
//! carry the entity's cuid but have no type signal in their embedding, so they
//! can only be resolved through the knowledge graph.
//!
//! The generated embedding store is additive over whitespace tokens, skips
//! the mask token, and plants a relation component in every canonical entity
//! vector, which makes masked-sentence relation prediction informative.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::write_atomic;
use crate::embeddings::{FileEmbeddingStore, StoreMetadata, MASK_TOKEN};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::numerics::{seeded_rng, Vector};
use crate::relweights::{build_masked_sentences, Entity, RelationType, Triple};
use crate::seed::derive_seed;
use crate::taskfusion::{Mention, RelationAnnotation, TaskDocument};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub docs: usize,
    /// Probability that a fact's relation is replaced in the triple file.
    pub noise: f64,
    pub seed: u64,
    /// Seed for document rendering; defaults to `seed`. Two corpora with the
    /// same `seed` share their knowledge graph.
    pub doc_seed: Option<u64>,
    pub dev_fraction: f64,
    pub alias_rate: f64,
    /// Objects per subject.
    pub degree: usize,
    pub max_sentences: usize,
    pub embedding_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 50,
            relations: 3,
            docs: 200,
            noise: 0.1,
            seed: 0,
            doc_seed: None,
            dev_fraction: 0.2,
            alias_rate: 0.3,
            degree: 4,
            max_sentences: 3,
            embedding_dim: 32,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entities < 2 || self.relations == 0 || self.docs == 0 {
            return Err(Error::invalid("need at least 2 entities, 1 relation and 1 document"));
        }
        if self.entities < self.relations + 1 {
            return Err(Error::invalid(format!(
                "{} relations need at least {} entities",
                self.relations,
                self.relations + 1
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::invalid("noise must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) || !(0.0..=1.0).contains(&self.alias_rate) {
            return Err(Error::invalid("dev_fraction must lie in [0, 1) and alias_rate in [0, 1]"));
        }
        if self.degree == 0 || self.max_sentences == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("degree, max_sentences and embedding_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub entities: Vec<Entity>,
    pub entity_types: Vec<String>,
    pub aliases: Vec<String>,
    pub relations: Vec<RelationType>,
    /// The ground-truth graph.
    pub facts: Vec<Triple>,
    /// The facts after relation noise; input of the weighting step.
    pub triples: Vec<Triple>,
    pub flipped: usize,
    pub train: Vec<TaskDocument>,
    pub dev: Vec<TaskDocument>,
    pub embeddings: FileEmbeddingStore,
}

/// With probability `noise`, replaces `relation` by a uniformly drawn
/// different one. A single relation cannot be flipped.
pub fn flip_relation(rng: &mut impl Rng, relation: usize, num_relations: usize, noise: f64) -> usize {
    if num_relations < 2 || rng.random::<f64>() >= noise {
        return relation;
    }
    let other = rng.random_range(0..num_relations - 1);
    if other >= relation {
        other + 1
    } else {
        other
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .flat_map(|_| {
                [
                    *CONSONANTS.choose(rng).expect("non-empty") as char,
                    *VOWELS.choose(rng).expect("non-empty") as char,
                ]
            })
            .collect();
        if used.insert(word.clone()) {
            return word;
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.random_range(-1.0..=1.0) * scale).collect()
}

/// Sum of token vectors over whitespace tokens, skipping the mask token.
fn embed_tokens(tokens: &BTreeMap<String, Vec<f64>>, text: &str, dim: usize) -> Result<Vector> {
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace().filter(|t| *t != MASK_TOKEN) {
        let t = tokens
            .get(token)
            .ok_or_else(|| Error::MissingEmbedding(token.to_owned()))?;
        for (a, b) in v.iter_mut().zip(t) {
            *a += b;
        }
    }
    Vector::new(v)
}

struct Rendered {
    text: String,
    mentions: Vec<Mention>,
    relations: Vec<RelationAnnotation>,
}

impl Rendered {
    fn new() -> Self {
        Self {
            text: String::new(),
            mentions: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn push_mention(&mut self, surface: &str, entity_type: &str, cuid: &str) -> usize {
        let start = self.text.chars().count();
        self.text.push_str(surface);
        self.mentions.push(Mention {
            start,
            end: start + surface.chars().count(),
            entity_type: entity_type.to_owned(),
            cuid: Some(cuid.to_owned()),
        });
        self.mentions.len() - 1
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n_types = spec.relations + 1;
    let mut rng = seeded_rng(derive_seed(spec.seed, "synthetic-kg"));
    let mut used = HashSet::new();

    let entity_types: Vec<String> = (0..spec.entities).map(|i| format!("T{}", i % n_types)).collect();
    let entities: Vec<Entity> = (0..spec.entities)
        .map(|i| Entity {
            id: format!("e{i:03}"),
            surface: pseudo_word(&mut rng, &mut used),
            cuid: Some(format!("C{i:07}")),
        })
        .collect();
    let aliases: Vec<String> = (0..spec.entities).map(|_| pseudo_word(&mut rng, &mut used)).collect();
    let relations: Vec<RelationType> = (0..spec.relations)
        .map(|k| {
            let verb = format!("{} {}", pseudo_word(&mut rng, &mut used), pseudo_word(&mut rng, &mut used));
            RelationType::new(format!("R{k}"), verb)
        })
        .collect();

    let by_type: Vec<Vec<usize>> = (0..n_types)
        .map(|t| (0..spec.entities).filter(|i| i % n_types == t).collect())
        .collect();
    let mut fact_set: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    for k in 0..spec.relations {
        let objects = &by_type[k + 1];
        for &s in &by_type[k] {
            for &o in objects.choose_multiple(&mut rng, spec.degree.min(objects.len())) {
                fact_set.insert((s, k, o));
            }
        }
        for &o in objects {
            if !fact_set.iter().any(|&(_, r, x)| r == k && x == o) {
                let s = *by_type[k].choose(&mut rng).expect("every type is populated");
                fact_set.insert((s, k, o));
            }
        }
    }
    let facts_idx: Vec<(usize, usize, usize)> = fact_set.into_iter().collect();
    let to_triple = |&(s, k, o): &(usize, usize, usize)| {
        Triple::new(entities[s].id.clone(), relations[k].id.clone(), entities[o].id.clone())
    };
    let facts: Vec<Triple> = facts_idx.iter().map(to_triple).collect();

    let mut noise_rng = seeded_rng(derive_seed(spec.seed, "synthetic-noise"));
    let mut flipped = 0;
    let triples: Vec<Triple> = facts_idx
        .iter()
        .map(|&(s, k, o)| {
            let r = flip_relation(&mut noise_rng, k, spec.relations, spec.noise);
            if r != k {
                flipped += 1;
            }
            to_triple(&(s, r, o))
        })
        .collect();

    let embeddings = planted_embeddings(spec, &entities, &aliases, &relations, &facts_idx)?;

    let doc_seed = spec.doc_seed.unwrap_or(spec.seed);
    let mut doc_rng = seeded_rng(derive_seed(doc_seed, "synthetic-docs"));
    let n_dev = ((spec.docs as f64 * spec.dev_fraction).round() as usize).min(spec.docs - 1);
    let n_train = spec.docs - n_dev;
    let mut cycle: Vec<usize> = Vec::new();
    let next_fact = |rng: &mut ChaCha8Rng, cycle: &mut Vec<usize>| {
        if cycle.is_empty() {
            *cycle = (0..facts_idx.len()).collect();
            cycle.shuffle(rng);
        }
        cycle.pop().expect("refilled above")
    };

    let mut train = Vec::with_capacity(n_train);
    let mut dev = Vec::with_capacity(n_dev);
    for d in 0..spec.docs {
        let is_dev = d >= n_train;
        let sentences = doc_rng.random_range(1..=spec.max_sentences).min(facts_idx.len());
        let mut chosen: Vec<usize> = Vec::with_capacity(sentences);
        while chosen.len() < sentences {
            let f = if is_dev {
                doc_rng.random_range(0..facts_idx.len())
            } else {
                next_fact(&mut doc_rng, &mut cycle)
            };
            if !chosen.contains(&f) {
                chosen.push(f);
            }
        }
        let mut doc = Rendered::new();
        for (n, &f) in chosen.iter().enumerate() {
            let (s, k, o) = facts_idx[f];
            if n > 0 {
                doc.text.push(' ');
            }
            let surface = |e: usize, rng: &mut ChaCha8Rng| -> String {
                if is_dev && rng.random::<f64>() < spec.alias_rate {
                    aliases[e].clone()
                } else {
                    entities[e].surface.clone()
                }
            };
            let s_surface = surface(s, &mut doc_rng);
            let o_surface = surface(o, &mut doc_rng);
            let head = doc.push_mention(&s_surface, &entity_types[s], entities[s].cuid.as_deref().unwrap_or(""));
            doc.text.push(' ');
            doc.text.push_str(&relations[k].verbalization);
            doc.text.push(' ');
            let tail = doc.push_mention(&o_surface, &entity_types[o], entities[o].cuid.as_deref().unwrap_or(""));
            doc.text.push('.');
            doc.relations.push(RelationAnnotation {
                head,
                tail,
                relation_type: relations[k].id.clone(),
            });
        }
        let doc = TaskDocument {
            id: format!("{}{d:04}", if is_dev { "dev" } else { "train" }),
            text: doc.text,
            mentions: doc.mentions,
            relations: doc.relations,
        };
        doc.validate()?;
        if is_dev {
            dev.push(doc);
        } else {
            train.push(doc);
        }
    }

    Ok(SyntheticCorpus {
        entities,
        entity_types,
        aliases,
        relations,
        facts,
        triples,
        flipped,
        train,
        dev,
        embeddings,
    })
}

fn planted_embeddings(
    spec: &SyntheticSpec,
    entities: &[Entity],
    aliases: &[String],
    relations: &[RelationType],
    facts: &[(usize, usize, usize)],
) -> Result<FileEmbeddingStore> {
    let dim = spec.embedding_dim;
    let n_types = spec.relations + 1;
    let mut rng = seeded_rng(derive_seed(spec.seed, "synthetic-embeddings"));
    let mut tokens: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut relation_vecs = Vec::with_capacity(relations.len());
    for r in relations {
        let mut sum = vec![0.0; dim];
        for token in r.verbalization.split_whitespace() {
            let v = random_vector(&mut rng, dim);
            for (a, b) in sum.iter_mut().zip(&v) {
                *a += b;
            }
            tokens.insert(token.to_owned(), v);
        }
        relation_vecs.push(sum);
    }
    for (i, e) in entities.iter().enumerate() {
        let t = i % n_types;
        let mut v = random_vector(&mut rng, dim);
        // Subjects of relation t and objects of relation t - 1.
        for k in [t.checked_sub(1), (t < spec.relations).then_some(t)].into_iter().flatten() {
            for (a, b) in v.iter_mut().zip(&relation_vecs[k]) {
                *a += b;
            }
        }
        tokens.insert(e.surface.clone(), v);
    }
    for alias in aliases {
        tokens.insert(alias.clone(), random_vector(&mut rng, dim));
    }

    let mut keys: BTreeSet<String> = entities.iter().map(|e| e.surface.clone()).collect();
    keys.extend(aliases.iter().cloned());
    let pairs: BTreeSet<(usize, usize)> = facts.iter().map(|&(s, _, o)| (s, o)).collect();
    for (s, o) in pairs {
        for r in relations {
            let m = build_masked_sentences(&entities[s].surface, &r.verbalization, &entities[o].surface)?;
            keys.extend(m.all().map(str::to_owned));
        }
    }
    let mut metadata = StoreMetadata::new("synthetic-planted", "sum");
    metadata
        .extra
        .insert("seed".into(), serde_json::Value::from(spec.seed));
    let mut store = FileEmbeddingStore::new(dim, metadata)?;
    for key in keys {
        let v = embed_tokens(&tokens, &key, dim)?;
        store.insert(key, &v)?;
    }
    Ok(store)
}

impl SyntheticCorpus {
    /// Every artifact as `(file name, bytes)`.
    pub fn files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let entity_rows: Vec<serde_json::Value> = self
            .entities
            .iter()
            .zip(&self.entity_types)
            .zip(&self.aliases)
            .map(|((e, t), a)| {
                let mut v = serde_json::to_value(e).expect("entities serialize");
                v["type"] = serde_json::Value::from(t.as_str());
                v["alias"] = serde_json::Value::from(a.as_str());
                v
            })
            .collect();
        Ok(vec![
            ("entities.jsonl", jsonl::to_string(&entity_rows)?.into_bytes()),
            ("relations.jsonl", jsonl::to_string(&self.relations)?.into_bytes()),
            ("kg.jsonl", jsonl::to_string(&self.facts)?.into_bytes()),
            ("triples.jsonl", jsonl::to_string(&self.triples)?.into_bytes()),
            ("train.jsonl", jsonl::to_string(&self.train)?.into_bytes()),
            ("dev.jsonl", jsonl::to_string(&self.dev)?.into_bytes()),
            ("embeddings.kgxe", self.embeddings.encode()?),
        ])
    }

    /// Writes every artifact into `dir` and returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in self.files()? {
            let path = dir.join(name);
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}
