//! General-knowledge (GK) store: a relational encoder trained on normalized
//! relation weights, and the frozen store of `initial ⊕ relational` vectors
//! it produces.
//!
//! The encoder `f` minimizes
//!
//! ```text
//! Σ_(s,r) || f(s) - Σ_j w̄_j f(o_j) ||²  +  λ Σ_e || f(e) - P x_e ||²
//! ```
//!
//! where `w̄` are the per-`(s, r)` normalized weights, `x_e` is the entity's
//! initial embedding and `P` is a fixed seeded random projection. The first
//! term alone is minimized by any constant `f`; the anchor term keeps
//! entities apart.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{write_atomic, Reader, Writer};
use crate::embeddings::{EmbeddingProvider, FileEmbeddingStore, StoreMetadata};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Activation, Adam, AdamConfig, Ffnn, FfnnGrads, Matrix, Vector};
use crate::relweights::{Entity, NormalizedWeights, Schema, Vocabulary};
use crate::seed::{derive_seed, sha256_hex};

pub const KGXS_MAGIC: &[u8; 4] = b"KGXS";
pub const KGXS_VERSION: u16 = 1;

/// Output variance across entities below which training reports collapse.
pub const COLLAPSE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GkTrainConfig {
    /// Hidden width; zero means a single linear layer.
    pub hidden: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Groups per optimizer step; `None` is full batch.
    pub batch_groups: Option<usize>,
    pub source: String,
}

impl Default for GkTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            out_dim: 64,
            activation: Activation::Relu,
            lambda: 0.1,
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            batch_groups: None,
            source: "unknown".into(),
        }
    }
}

impl GkTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return Err(Error::invalid("out_dim must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_groups == Some(0) {
            return Err(Error::invalid("batch_groups must be positive"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Fixed random projection `P` of shape `out_dim x in_dim` used by the anchor term.
pub fn anchor_projection(in_dim: usize, out_dim: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    let scale = (3.0 / in_dim as f64).sqrt();
    let data = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-1.0..=1.0) * scale)
        .collect();
    Matrix::from_vec(out_dim, in_dim, data).expect("shape is consistent")
}

struct Group {
    subject: usize,
    objects: Vec<(usize, f64)>,
}

/// The GK training objective over a fixed entity universe.
pub struct GkObjective {
    ids: Vec<String>,
    inputs: Vec<Vec<f64>>,
    anchors: Vec<Vec<f64>>,
    groups: Vec<Group>,
    lambda: f64,
}

impl GkObjective {
    /// The entity universe is every id mentioned by `groups`, in sorted order.
    pub fn new(
        groups: &[NormalizedWeights],
        initial: &BTreeMap<String, Vector>,
        projection: &Matrix,
        lambda: f64,
    ) -> Result<Self> {
        let universe: BTreeSet<&str> = groups
            .iter()
            .flat_map(|g| {
                std::iter::once(g.subject.as_str()).chain(g.entries.iter().map(|(o, _)| o.as_str()))
            })
            .collect();
        let ids: Vec<String> = universe.iter().map(|s| s.to_string()).collect();
        let position: BTreeMap<&str, usize> =
            universe.iter().enumerate().map(|(i, s)| (*s, i)).collect();

        let mut inputs = Vec::with_capacity(ids.len());
        for id in &ids {
            let v = initial
                .get(id)
                .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
            if v.dim() != projection.cols() {
                return Err(Error::dim(projection.cols(), v.dim()));
            }
            inputs.push(v.as_slice().to_vec());
        }
        let anchors = inputs
            .iter()
            .map(|x| projection.matvec(x))
            .collect::<Result<Vec<_>>>()?;
        let groups = groups
            .iter()
            .map(|g| Group {
                subject: position[g.subject.as_str()],
                objects: g
                    .entries
                    .iter()
                    .map(|(o, w)| (position[o.as_str()], *w))
                    .collect(),
            })
            .collect();
        Ok(Self {
            ids,
            inputs,
            anchors,
            groups,
            lambda,
        })
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn loss(&self, f: &Ffnn) -> Result<f64> {
        let outputs = self
            .inputs
            .par_iter()
            .map(|x| f.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..self.groups.len()).collect();
        Ok(self.loss_and_output_grads(&outputs, &all, None).0)
    }

    pub fn loss_and_grad(&self, f: &Ffnn) -> Result<(f64, FfnnGrads)> {
        let all: Vec<usize> = (0..self.groups.len()).collect();
        self.batch_loss_and_grad(f, &all, None)
    }

    /// Loss and gradient restricted to `group_ids`; the anchor covers
    /// `anchor_ids` (every entity when `None`).
    fn batch_loss_and_grad(
        &self,
        f: &Ffnn,
        group_ids: &[usize],
        anchor_ids: Option<&BTreeSet<usize>>,
    ) -> Result<(f64, FfnnGrads)> {
        let caches = self
            .inputs
            .par_iter()
            .map(|x| f.forward_cached(x))
            .collect::<Result<Vec<_>>>()?;
        let outputs: Vec<Vec<f64>> = caches.iter().map(|c| c.output().to_vec()).collect();
        let (loss, upstream) = self.loss_and_output_grads(&outputs, group_ids, anchor_ids);

        let per_entity = caches
            .par_iter()
            .zip(&upstream)
            .map(|(cache, g)| {
                if g.iter().all(|&v| v == 0.0) {
                    Ok(None)
                } else {
                    f.backward(cache, g).map(|(grads, _)| Some(grads))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = FfnnGrads::zeros_like(f);
        for g in per_entity.iter().flatten() {
            grads.accumulate(g);
        }
        Ok((loss, grads))
    }

    fn loss_and_output_grads(
        &self,
        outputs: &[Vec<f64>],
        group_ids: &[usize],
        anchor_ids: Option<&BTreeSet<usize>>,
    ) -> (f64, Vec<Vec<f64>>) {
        let dim = outputs.first().map_or(0, Vec::len);
        let mut upstream = vec![vec![0.0; dim]; outputs.len()];
        let mut loss = 0.0;
        for &gi in group_ids {
            let group = &self.groups[gi];
            let mut residual = outputs[group.subject].clone();
            for &(o, w) in &group.objects {
                for (r, y) in residual.iter_mut().zip(&outputs[o]) {
                    *r -= w * y;
                }
            }
            loss += residual.iter().map(|r| r * r).sum::<f64>();
            for (u, r) in upstream[group.subject].iter_mut().zip(&residual) {
                *u += 2.0 * r;
            }
            for &(o, w) in &group.objects {
                for (u, r) in upstream[o].iter_mut().zip(&residual) {
                    *u -= 2.0 * w * r;
                }
            }
        }
        if self.lambda > 0.0 {
            for (e, (out, anchor)) in outputs.iter().zip(&self.anchors).enumerate() {
                if anchor_ids.is_some_and(|ids| !ids.contains(&e)) {
                    continue;
                }
                for ((u, y), a) in upstream[e].iter_mut().zip(out).zip(anchor) {
                    let d = y - a;
                    loss += self.lambda * d * d;
                    *u += 2.0 * self.lambda * d;
                }
            }
        }
        (loss, upstream)
    }

    /// Mean squared distance of each entity's output from the mean output.
    pub fn output_variance(&self, f: &Ffnn) -> Result<f64> {
        let outputs = self
            .inputs
            .iter()
            .map(|x| f.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(total_variance(&outputs))
    }
}

fn total_variance(outputs: &[Vec<f64>]) -> f64 {
    let n = outputs.len();
    if n == 0 {
        return 0.0;
    }
    let dim = outputs[0].len();
    let mut mean = vec![0.0; dim];
    for o in outputs {
        for (m, x) in mean.iter_mut().zip(o) {
            *m += x / n as f64;
        }
    }
    outputs
        .iter()
        .map(|o| o.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// Relational loss of `f` over `groups` plus the anchor term; see the module docs.
pub fn gk_loss(
    f: &Ffnn,
    groups: &[NormalizedWeights],
    initial: &BTreeMap<String, Vector>,
    lambda: f64,
    projection: &Matrix,
) -> Result<f64> {
    GkObjective::new(groups, initial, projection, lambda)?.loss(f)
}

/// How initial entity vectors are obtained from a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKey {
    /// Embed the entity's surface form.
    Surface,
    /// Look up the entity id.
    Id,
}

/// Initial embeddings for every entity referenced by `groups`.
pub fn initial_embeddings(
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    groups: &[NormalizedWeights],
    key: InitialKey,
) -> Result<BTreeMap<String, Vector>> {
    let ids: BTreeSet<&str> = groups
        .iter()
        .flat_map(|g| std::iter::once(g.subject.as_str()).chain(g.entries.iter().map(|(o, _)| o.as_str())))
        .collect();
    ids.into_iter()
        .map(|id| {
            let entity = vocab.get(id)?;
            let text = match key {
                InitialKey::Surface => entity.surface.as_str(),
                InitialKey::Id => entity.id.as_str(),
            };
            Ok((id.to_owned(), provider.embed(text)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GkTraining {
    pub store: GkStore,
    pub encoder: Ffnn,
    /// Loss before every epoch's update, followed by the final loss.
    pub loss_curve: Vec<f64>,
    pub output_variance: f64,
    pub collapse_warning: bool,
}

impl GkTraining {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{i},{l:e}\n"));
        }
        out
    }
}

/// Trains the relational encoder with Adam and builds a frozen [`GkStore`].
pub fn train_gk(
    groups: &[NormalizedWeights],
    vocab: &Vocabulary,
    initial: &BTreeMap<String, Vector>,
    schema: &Schema,
    config: &GkTrainConfig,
) -> Result<GkTraining> {
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::invalid("no weight groups to train on"));
    }
    let in_dim = initial
        .values()
        .next()
        .map(Vector::dim)
        .ok_or_else(|| Error::invalid("no initial embeddings"))?;
    let projection = anchor_projection(in_dim, config.out_dim, derive_seed(config.seed, "gk-anchor"));
    let objective = GkObjective::new(groups, initial, &projection, config.lambda)?;

    let mut rng = seeded_rng(derive_seed(config.seed, "gk-encoder"));
    let mut encoder = if config.hidden == 0 {
        Ffnn::init(&[in_dim, config.out_dim], &[Activation::Identity], &mut rng)?
    } else {
        Ffnn::init(
            &[in_dim, config.hidden, config.out_dim],
            &[config.activation, Activation::Identity],
            &mut rng,
        )?
    };
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut shuffle_rng = seeded_rng(derive_seed(config.seed, "gk-batches"));
    let mut order: Vec<usize> = (0..objective.group_count()).collect();

    let mut loss_curve = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let loss = match config.batch_groups {
            None => {
                let (loss, grads) = objective.loss_and_grad(&encoder)?;
                check_finite(loss, epoch)?;
                apply(&mut adam, &mut encoder, &grads)?;
                loss
            }
            Some(size) => {
                let loss = objective.loss(&encoder)?;
                check_finite(loss, epoch)?;
                order.shuffle(&mut shuffle_rng);
                for chunk in order.chunks(size) {
                    let touched: BTreeSet<usize> = chunk
                        .iter()
                        .flat_map(|&g| {
                            let group = &objective.groups[g];
                            std::iter::once(group.subject).chain(group.objects.iter().map(|(o, _)| *o))
                        })
                        .collect();
                    let (_, grads) = objective.batch_loss_and_grad(&encoder, chunk, Some(&touched))?;
                    apply(&mut adam, &mut encoder, &grads)?;
                }
                loss
            }
        };
        loss_curve.push(loss);
        if !encoder.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: f64::NAN });
        }
    }
    let final_loss = objective.loss(&encoder)?;
    check_finite(final_loss, config.epochs)?;
    loss_curve.push(final_loss);

    let output_variance = objective.output_variance(&encoder)?;
    let collapse_warning = output_variance < COLLAPSE_VARIANCE;

    let mut nodes = Vec::with_capacity(objective.entity_ids().len());
    for (i, id) in objective.entity_ids().iter().enumerate() {
        let entity = vocab.get(id)?.clone();
        let relational = Vector::new(encoder.forward(objective.input(i))?)?;
        nodes.push(GkNode::new(entity, initial[id].clone(), relational)?);
    }
    let provenance = GkProvenance {
        source: config.source.clone(),
        config_hash: config.hash(),
        config: config.clone(),
        anchor_regularized: config.lambda > 0.0,
        final_loss,
        output_variance,
        collapse_warning,
    };
    let mut store = GkStore::new(nodes, schema.clone(), provenance)?;
    store.freeze();
    Ok(GkTraining {
        store,
        encoder,
        loss_curve,
        output_variance,
        collapse_warning,
    })
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged { epoch, loss })
    }
}

fn apply(adam: &mut Adam, net: &mut Ffnn, grads: &FfnnGrads) -> Result<()> {
    let grads = grads.tensors();
    let mut params = net.params_mut();
    adam.step(&mut params, &grads)
}

/// One GK entity. Vectors are kept at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct GkNode {
    pub entity: Entity,
    initial: Vector,
    relational: Vector,
}

impl GkNode {
    pub fn new(entity: Entity, initial: Vector, relational: Vector) -> Result<Self> {
        Ok(Self {
            entity,
            initial: Vector::from_f32(&initial.to_f32())?,
            relational: Vector::from_f32(&relational.to_f32())?,
        })
    }

    pub fn initial_vec(&self) -> &Vector {
        &self.initial
    }

    pub fn relational_vec(&self) -> &Vector {
        &self.relational
    }

    /// `initial ⊕ relational`.
    pub fn final_vec(&self) -> Vector {
        self.initial.concat(&self.relational)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GkProvenance {
    pub source: String,
    pub config_hash: String,
    pub config: GkTrainConfig,
    pub anchor_regularized: bool,
    pub final_loss: f64,
    pub output_variance: f64,
    pub collapse_warning: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreHeader {
    provenance: GkProvenance,
    schema: Schema,
    frozen: bool,
    entities: Vec<Entity>,
}

/// Task-independent entity store. Once frozen its vectors never change.
#[derive(Debug, Clone, PartialEq)]
pub struct GkStore {
    nodes: BTreeMap<String, GkNode>,
    schema: Schema,
    provenance: GkProvenance,
    frozen: bool,
}

impl GkStore {
    pub fn new(nodes: Vec<GkNode>, schema: Schema, provenance: GkProvenance) -> Result<Self> {
        let mut store = Self {
            nodes: BTreeMap::new(),
            schema,
            provenance,
            frozen: false,
        };
        for node in nodes {
            store.insert(node)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, node: GkNode) -> Result<()> {
        if self.frozen {
            return Err(Error::State("GK store is frozen".into()));
        }
        if let Some(first) = self.nodes.values().next() {
            if first.initial.dim() != node.initial.dim() {
                return Err(Error::dim(first.initial.dim(), node.initial.dim()));
            }
            if first.relational.dim() != node.relational.dim() {
                return Err(Error::dim(first.relational.dim(), node.relational.dim()));
            }
        }
        if self.nodes.contains_key(&node.entity.id) {
            return Err(Error::invalid(format!("duplicate GK entity {:?}", node.entity.id)));
        }
        self.nodes.insert(node.entity.id.clone(), node);
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GkNode> {
        self.nodes.get(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GkNode> {
        self.nodes.values()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn provenance(&self) -> &GkProvenance {
        &self.provenance
    }

    /// `initial_dim + relational_dim`, or zero for an empty store.
    pub fn final_dim(&self) -> usize {
        self.nodes
            .values()
            .next()
            .map_or(0, |n| n.initial.dim() + n.relational.dim())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = StoreHeader {
            provenance: self.provenance.clone(),
            schema: self.schema.clone(),
            frozen: self.frozen,
            entities: self.nodes.values().map(|n| n.entity.clone()).collect(),
        };
        let mut w = Writer::new();
        w.bytes(KGXS_MAGIC);
        w.u16(KGXS_VERSION);
        w.json(&header)?;
        for block in [self.block(true)?, self.block(false)?] {
            let bytes = block.encode()?;
            w.u64(bytes.len() as u64);
            w.bytes(&bytes);
        }
        Ok(w.finish())
    }

    fn block(&self, initial: bool) -> Result<FileEmbeddingStore> {
        let (name, dim) = match self.nodes.values().next() {
            Some(n) if initial => ("initial", n.initial.dim()),
            Some(n) => ("relational", n.relational.dim()),
            None => (if initial { "initial" } else { "relational" }, 1),
        };
        let mut block = FileEmbeddingStore::new(dim, StoreMetadata::new(&self.provenance.source, name))?;
        for (id, node) in &self.nodes {
            block.insert(id.clone(), if initial { &node.initial } else { &node.relational })?;
        }
        Ok(block)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(KGXS_MAGIC)?;
        let version = r.u16()?;
        if version != KGXS_VERSION {
            return Err(Error::format(format!("unsupported KGXS version {version}")));
        }
        let header: StoreHeader = r.json()?;
        let mut blocks = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = usize::try_from(r.u64()?).map_err(|_| Error::format("block too large"))?;
            blocks.push(FileEmbeddingStore::decode(r.take(len)?)?);
        }
        r.expect_end()?;
        let (initial, relational) = (&blocks[0], &blocks[1]);
        if initial.len() != header.entities.len() || relational.len() != header.entities.len() {
            return Err(Error::format("KGXS blocks disagree with the entity list"));
        }
        let mut nodes = Vec::with_capacity(header.entities.len());
        for ((entity, (id_a, a)), (id_b, b)) in header.entities.into_iter().zip(initial.iter()).zip(relational.iter()) {
            if entity.id != id_a || entity.id != id_b {
                return Err(Error::format(format!("KGXS entity order mismatch at {:?}", entity.id)));
            }
            nodes.push(GkNode {
                entity,
                initial: a.clone(),
                relational: b.clone(),
            });
        }
        let mut store = Self::new(nodes, header.schema, header.provenance)
            .map_err(|e| Error::format(e.to_string()))?;
        store.frozen = header.frozen;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the encoded store.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.encode()?))
    }
}
