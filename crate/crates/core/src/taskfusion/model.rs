use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::document::{RelationAnnotation, TaskDocument};
use super::gcn::{Gcn, GcnLayer};
use super::graph::{build_sk_graph, FusionGraph, GraphConfig, NodeRef, TaskGraph};
use super::metrics::{evaluate_predictions, DocPrediction, MetricsReport};
use crate::codec::{write_atomic, Reader, Writer};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::gkstore::GkStore;
use crate::numerics::{glorot_uniform, seeded_rng, Activation, Adam, AdamConfig, Ffnn, FfnnGrads, Matrix};
use crate::seed::{derive_seed, sha256_hex};

pub const KGXM_MAGIC: &[u8; 4] = b"KGXM";
pub const KGXM_VERSION: u16 = 1;
pub const NULL_ENTITY: &str = "NULL";
pub const NO_RELATION: &str = "NO_RELATION";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Width of the input projection and the first graph convolution.
    pub hidden: usize,
    pub out_dim: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_docs: usize,
    /// Sampled negative pairs per gold relation.
    pub neg_ratio: usize,
    pub window: usize,
    pub link_top_k: usize,
    pub link_tau: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let graph = GraphConfig::default();
        Self {
            hidden: 128,
            out_dim: 64,
            head_hidden: 64,
            epochs: 50,
            lr: 5e-3,
            batch_docs: 16,
            neg_ratio: 3,
            window: graph.window,
            link_top_k: graph.link_top_k,
            link_tau: graph.link_tau,
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.out_dim == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.batch_docs == 0 {
            return Err(Error::invalid("batch_docs must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        Ok(())
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            window: self.window,
            link_top_k: self.link_top_k,
            link_tau: self.link_tau,
        }
    }
}

/// Label vocabularies; index 0 is always the null label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub entity: Vec<String>,
    pub relation: Vec<String>,
}

impl Labels {
    pub fn from_documents(docs: &[TaskDocument]) -> Self {
        let entity: BTreeSet<&str> = docs
            .iter()
            .flat_map(|d| d.mentions.iter().map(|m| m.entity_type.as_str()))
            .filter(|t| *t != NULL_ENTITY)
            .collect();
        let relation: BTreeSet<&str> = docs
            .iter()
            .flat_map(|d| d.relations.iter().map(|r| r.relation_type.as_str()))
            .filter(|t| *t != NO_RELATION)
            .collect();
        Self {
            entity: std::iter::once(NULL_ENTITY).chain(entity).map(str::to_owned).collect(),
            relation: std::iter::once(NO_RELATION).chain(relation).map(str::to_owned).collect(),
        }
    }
}

/// A task graph with its fusion view, raw node features and, per document,
/// the graph position of every mention and the candidate relation pairs.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub task: TaskGraph,
    pub fusion: FusionGraph,
    /// Rows are SK nodes, which occupy the first fusion positions.
    pub sk_features: Matrix,
    /// Rows are the GK nodes that follow the SK nodes. Read-only in training.
    pub gk_features: Matrix,
    pub mention_pos: Vec<Vec<usize>>,
    pub candidates: Vec<Vec<(usize, usize)>>,
}

impl PreparedGraph {
    pub fn new(
        docs: &[TaskDocument],
        gk: Option<&GkStore>,
        provider: &dyn EmbeddingProvider,
        config: &GraphConfig,
    ) -> Result<Self> {
        let task = build_sk_graph(docs, gk, provider, config)?;
        let fusion = FusionGraph::from_task(&task)?;
        let n_sk = task.sk_nodes.len();
        let mut sk_features = Matrix::zeros(n_sk, provider.dim());
        for (i, node) in task.sk_nodes.iter().enumerate() {
            if node.feature.dim() != provider.dim() {
                return Err(Error::dim(provider.dim(), node.feature.dim()));
            }
            sk_features.row_mut(i).copy_from_slice(node.feature.as_slice());
        }
        let gk_dim = gk.map_or(0, GkStore::final_dim);
        let mut gk_features = Matrix::zeros(fusion.len() - n_sk, gk_dim);
        for (k, node) in fusion.nodes()[n_sk..].iter().enumerate() {
            let id = node.key.strip_prefix("gk:").expect("GK nodes follow SK nodes");
            let gk_node = gk
                .and_then(|s| s.get(id))
                .ok_or_else(|| Error::MissingEmbedding(id.to_owned()))?;
            gk_features.row_mut(k).copy_from_slice(gk_node.final_vec().as_slice());
        }
        let mention_pos = task
            .mention_nodes
            .iter()
            .map(|nodes| nodes.iter().map(|n| fusion.position(n, &task)).collect())
            .collect();
        let candidates = docs
            .iter()
            .map(|d| {
                let sentences = d.sentence_indices();
                let n = d.mentions.len();
                (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| i != j && sentences[i].abs_diff(sentences[j]) <= config.window)
                    .collect()
            })
            .collect();
        Ok(Self {
            task,
            fusion,
            sk_features,
            gk_features,
            mention_pos,
            candidates,
        })
    }

    pub fn sk_count(&self) -> usize {
        self.sk_features.rows()
    }

    pub fn gk_count(&self) -> usize {
        self.gk_features.rows()
    }

    /// Fraction of mentions resolved to GK nodes.
    pub fn gk_mention_share(&self) -> f64 {
        let total: usize = self.task.mention_nodes.iter().map(Vec::len).sum();
        let gk = self
            .task
            .mention_nodes
            .iter()
            .flatten()
            .filter(|n| matches!(n, NodeRef::Gk(_)))
            .count();
        if total == 0 {
            0.0
        } else {
            gk as f64 / total as f64
        }
    }
}

/// Fusion GCN with entity-type and relation heads.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub config: TaskConfig,
    pub labels: Labels,
    pub sk_dim: usize,
    pub gk_dim: usize,
    /// Content hash of the GK store used in training, if any.
    pub gk_hash: Option<String>,
    pub proj_sk: Matrix,
    pub proj_gk: Matrix,
    pub gcn: Gcn,
    pub entity_head: Ffnn,
    pub relation_head: Ffnn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    config: TaskConfig,
    labels: Labels,
    sk_dim: usize,
    gk_dim: usize,
    gk_hash: Option<String>,
}

struct Grads {
    proj_sk: Matrix,
    proj_gk: Matrix,
    gcn: Vec<Matrix>,
    entity: FfnnGrads,
    relation: FfnnGrads,
}

/// Examples for one optimization step.
struct Batch {
    entities: Vec<(usize, usize)>,
    /// `(head position, tail position, label)`.
    relations: Vec<(usize, usize, usize)>,
}

fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let grad = exp
        .iter()
        .enumerate()
        .map(|(k, e)| e / sum - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn pair_feature(hi: &[f64], hj: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(hi.len() * 3);
    f.extend_from_slice(hi);
    f.extend_from_slice(hj);
    f.extend(hi.iter().zip(hj).map(|(a, b)| a * b));
    f
}

impl TaskModel {
    pub fn init(config: TaskConfig, labels: Labels, sk_dim: usize, gk_dim: usize, gk_hash: Option<String>) -> Result<Self> {
        config.validate()?;
        if sk_dim == 0 {
            return Err(Error::invalid("SK feature dimension must be positive"));
        }
        let mut rng = seeded_rng(derive_seed(config.seed, "task-init"));
        let proj_sk = glorot_uniform(config.hidden, sk_dim, &mut rng);
        let proj_gk = glorot_uniform(config.hidden, gk_dim, &mut rng);
        let gcn = Gcn::new(vec![
            GcnLayer {
                weight: glorot_uniform(config.hidden, config.hidden, &mut rng),
                activation: Activation::Relu,
            },
            GcnLayer {
                weight: glorot_uniform(config.out_dim, config.hidden, &mut rng),
                activation: Activation::Identity,
            },
        ])?;
        let acts = [Activation::Relu, Activation::Identity];
        let entity_head = Ffnn::init(&[config.out_dim, config.head_hidden, labels.entity.len()], &acts, &mut rng)?;
        let relation_head = Ffnn::init(
            &[3 * config.out_dim, config.head_hidden, labels.relation.len()],
            &acts,
            &mut rng,
        )?;
        Ok(Self {
            config,
            labels,
            sk_dim,
            gk_dim,
            gk_hash,
            proj_sk,
            proj_gk,
            gcn,
            entity_head,
            relation_head,
        })
    }

    fn check_graph(&self, graph: &PreparedGraph) -> Result<()> {
        if graph.sk_features.cols() != self.sk_dim {
            return Err(Error::dim(self.sk_dim, graph.sk_features.cols()));
        }
        if graph.gk_count() > 0 && graph.gk_features.cols() != self.gk_dim {
            return Err(Error::dim(self.gk_dim, graph.gk_features.cols()));
        }
        Ok(())
    }

    /// Projected input features of every fusion node.
    fn inputs(&self, graph: &PreparedGraph) -> Result<Matrix> {
        self.check_graph(graph)?;
        let mut x = Matrix::zeros(graph.fusion.len(), self.config.hidden);
        for i in 0..graph.sk_count() {
            let v = self.proj_sk.matvec(graph.sk_features.row(i))?;
            x.row_mut(i).copy_from_slice(&v);
        }
        for k in 0..graph.gk_count() {
            let v = self.proj_gk.matvec(graph.gk_features.row(k))?;
            x.row_mut(graph.sk_count() + k).copy_from_slice(&v);
        }
        Ok(x)
    }

    /// Final node representations.
    pub fn node_representations(&self, graph: &PreparedGraph) -> Result<Matrix> {
        self.gcn.forward(graph.fusion.adjacency(), &self.inputs(graph)?)
    }

    fn loss_and_grads(&self, graph: &PreparedGraph, batch: &Batch) -> Result<(f64, Grads)> {
        let adj = graph.fusion.adjacency();
        let x = self.inputs(graph)?;
        let cache = self.gcn.forward_cached(adj, &x)?;
        let h = cache.output();
        let mut dh = Matrix::zeros(h.rows(), h.cols());
        let mut entity = FfnnGrads::zeros_like(&self.entity_head);
        let mut relation = FfnnGrads::zeros_like(&self.relation_head);
        let mut loss = 0.0;

        let scale = 1.0 / batch.entities.len().max(1) as f64;
        for &(pos, label) in &batch.entities {
            let c = self.entity_head.forward_cached(h.row(pos))?;
            let (l, g) = softmax_ce(c.output(), label);
            loss += l * scale;
            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
            let (grads, gin) = self.entity_head.backward(&c, &g)?;
            entity.accumulate(&grads);
            for (d, v) in dh.row_mut(pos).iter_mut().zip(&gin) {
                *d += v;
            }
        }

        let d = self.config.out_dim;
        let scale = 1.0 / batch.relations.len().max(1) as f64;
        for &(i, j, label) in &batch.relations {
            let c = self.relation_head.forward_cached(&pair_feature(h.row(i), h.row(j)))?;
            let (l, g) = softmax_ce(c.output(), label);
            loss += l * scale;
            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
            let (grads, gin) = self.relation_head.backward(&c, &g)?;
            relation.accumulate(&grads);
            let (hi, hj) = (h.row(i).to_vec(), h.row(j).to_vec());
            for k in 0..d {
                dh.row_mut(i)[k] += gin[k] + gin[2 * d + k] * hj[k];
                dh.row_mut(j)[k] += gin[d + k] + gin[2 * d + k] * hi[k];
            }
        }

        let (gcn, dx) = self.gcn.backward(adj, &cache, &dh)?;
        let mut proj_sk = Matrix::zeros(self.proj_sk.rows(), self.proj_sk.cols());
        for i in 0..graph.sk_count() {
            proj_sk.add_outer(dx.row(i), graph.sk_features.row(i))?;
        }
        let mut proj_gk = Matrix::zeros(self.proj_gk.rows(), self.proj_gk.cols());
        for k in 0..graph.gk_count() {
            proj_gk.add_outer(dx.row(graph.sk_count() + k), graph.gk_features.row(k))?;
        }
        Ok((
            loss,
            Grads {
                proj_sk,
                proj_gk,
                gcn,
                entity,
                relation,
            },
        ))
    }

    /// Training loss over every mention and every candidate pair of `docs`.
    pub fn loss(&self, graph: &PreparedGraph, docs: &[TaskDocument]) -> Result<f64> {
        let batch = full_batch(self, graph, docs)?;
        Ok(self.loss_and_grads(graph, &batch)?.0)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = vec![self.proj_sk.data_mut(), self.proj_gk.data_mut()];
        p.extend(self.gcn.weights_mut().map(Matrix::data_mut));
        p.extend(self.entity_head.params_mut());
        p.extend(self.relation_head.params_mut());
        p
    }

    fn is_finite(&self) -> bool {
        self.proj_sk.is_finite()
            && self.proj_gk.is_finite()
            && self.gcn.is_finite()
            && self.entity_head.is_finite()
            && self.relation_head.is_finite()
    }

    pub fn predict(&self, graph: &PreparedGraph, docs: &[TaskDocument]) -> Result<Vec<DocPrediction>> {
        if graph.mention_pos.len() != docs.len() {
            return Err(Error::dim(docs.len(), graph.mention_pos.len()));
        }
        let h = self.node_representations(graph)?;
        docs.iter()
            .enumerate()
            .map(|(d, _)| {
                let pos = &graph.mention_pos[d];
                let entities = pos
                    .iter()
                    .map(|&p| {
                        let label = argmax(&self.entity_head.forward(h.row(p))?);
                        Ok((label != 0).then(|| self.labels.entity[label].clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut relations = Vec::new();
                for &(i, j) in &graph.candidates[d] {
                    let scores = self.relation_head.forward(&pair_feature(h.row(pos[i]), h.row(pos[j])))?;
                    let label = argmax(&scores);
                    if label != 0 {
                        relations.push(RelationAnnotation {
                            head: i,
                            tail: j,
                            relation_type: self.labels.relation[label].clone(),
                        });
                    }
                }
                Ok(DocPrediction { entities, relations })
            })
            .collect()
    }

    /// Checks that `gk` is the store the model was trained against.
    pub fn check_gk(&self, gk: Option<&GkStore>) -> Result<()> {
        match (&self.gk_hash, gk) {
            (None, None) => Ok(()),
            (Some(expected), Some(store)) => {
                let got = store.content_hash()?;
                if &got == expected {
                    Ok(())
                } else {
                    Err(Error::State(format!("GK store hash {got} differs from training store {expected}")))
                }
            }
            (Some(_), None) => Err(Error::State("model was trained with a GK store; none supplied".into())),
            (None, Some(_)) => Err(Error::State("model was trained without a GK store".into())),
        }
    }

    pub fn evaluate(
        &self,
        docs: &[TaskDocument],
        gk: Option<&GkStore>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<MetricsReport> {
        self.check_gk(gk)?;
        let graph = PreparedGraph::new(docs, gk, provider, &self.config.graph())?;
        evaluate_predictions(docs, &self.predict(&graph, docs)?)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(KGXM_MAGIC);
        w.u16(KGXM_VERSION);
        w.json(&ModelHeader {
            config: self.config.clone(),
            labels: self.labels.clone(),
            sk_dim: self.sk_dim,
            gk_dim: self.gk_dim,
            gk_hash: self.gk_hash.clone(),
        })?;
        let mut tensors: Vec<&[f64]> = vec![self.proj_sk.data(), self.proj_gk.data()];
        tensors.extend(self.gcn.layers().iter().map(|l| l.weight.data()));
        tensors.extend(self.entity_head.params());
        tensors.extend(self.relation_head.params());
        for t in tensors {
            w.u64(t.len() as u64);
            for v in t {
                w.f64(*v);
            }
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(KGXM_MAGIC)?;
        let version = r.u16()?;
        if version != KGXM_VERSION {
            return Err(Error::format(format!("unsupported KGXM version {version}")));
        }
        let header: ModelHeader = r.json()?;
        let mut model = Self::init(header.config, header.labels, header.sk_dim, header.gk_dim, header.gk_hash)?;
        let mut read_into = |dst: &mut [f64]| -> Result<()> {
            let n = r.u64()?;
            if n != dst.len() as u64 {
                return Err(Error::format(format!("tensor of {n} values where {} expected", dst.len())));
            }
            for v in dst.iter_mut() {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(Error::format("non-finite model parameter"));
                }
            }
            Ok(())
        };
        for t in model.params_mut() {
            read_into(t)?;
        }
        r.expect_end()?;
        // Rebuild the heads so their caches are tied to the loaded weights.
        model.entity_head = Ffnn::new(model.entity_head.layers().to_vec())?;
        model.relation_head = Ffnn::new(model.relation_head.layers().to_vec())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.encode()?))
    }
}

fn entity_examples(model: &TaskModel, graph: &PreparedGraph, docs: &[TaskDocument], d: usize, out: &mut Vec<(usize, usize)>) {
    let index: HashMap<&str, usize> = model.labels.entity.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    for (m, mention) in docs[d].mentions.iter().enumerate() {
        if let Some(&label) = index.get(mention.entity_type.as_str()) {
            out.push((graph.mention_pos[d][m], label));
        }
    }
}

fn gold_pairs(model: &TaskModel, doc: &TaskDocument) -> HashMap<(usize, usize), usize> {
    let index: HashMap<&str, usize> = model.labels.relation.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    doc.relations
        .iter()
        .filter_map(|r| index.get(r.relation_type.as_str()).map(|&l| ((r.head, r.tail), l)))
        .collect()
}

fn full_batch(model: &TaskModel, graph: &PreparedGraph, docs: &[TaskDocument]) -> Result<Batch> {
    if graph.mention_pos.len() != docs.len() {
        return Err(Error::dim(docs.len(), graph.mention_pos.len()));
    }
    let mut batch = Batch {
        entities: Vec::new(),
        relations: Vec::new(),
    };
    for d in 0..docs.len() {
        entity_examples(model, graph, docs, d, &mut batch.entities);
        let gold = gold_pairs(model, &docs[d]);
        let pos = &graph.mention_pos[d];
        let pairs: BTreeSet<(usize, usize)> = graph.candidates[d].iter().copied().chain(gold.keys().copied()).collect();
        for (i, j) in pairs {
            batch.relations.push((pos[i], pos[j], gold.get(&(i, j)).copied().unwrap_or(0)));
        }
    }
    Ok(batch)
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_entity_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_relation_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskTraining {
    pub model: TaskModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; the last one without a dev set.
    pub best_epoch: usize,
    pub best_dev: Option<MetricsReport>,
    pub sk_nodes: usize,
    pub gk_nodes: usize,
    pub gk_mention_share: f64,
}

/// Trains the fusion model. With `dev` documents, every epoch is scored and
/// the parameters of the best epoch by relation F1, then entity F1, are kept.
pub fn train_task(
    train: &[TaskDocument],
    dev: Option<&[TaskDocument]>,
    gk: Option<&GkStore>,
    provider: &dyn EmbeddingProvider,
    config: &TaskConfig,
) -> Result<TaskTraining> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training documents"));
    }
    if let Some(store) = gk {
        if !store.is_frozen() {
            return Err(Error::State("GK store must be frozen before task training".into()));
        }
    }
    let graph_config = config.graph();
    let graph = PreparedGraph::new(train, gk, provider, &graph_config)?;
    let dev_graph = dev
        .map(|docs| PreparedGraph::new(docs, gk, provider, &graph_config))
        .transpose()?;
    let gk_hash = gk.map(GkStore::content_hash).transpose()?;
    let gk_dim = gk.map_or(0, GkStore::final_dim);
    let mut model = TaskModel::init(
        config.clone(),
        Labels::from_documents(train),
        provider.dim(),
        gk_dim,
        gk_hash,
    )?;

    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut order_rng = seeded_rng(derive_seed(config.seed, "task-batches"));
    let mut neg_rng = seeded_rng(derive_seed(config.seed, "task-negatives"));
    let golds: Vec<HashMap<(usize, usize), usize>> = train.iter().map(|d| gold_pairs(&model, d)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, TaskModel, MetricsReport)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_docs) {
            let mut batch = Batch {
                entities: Vec::new(),
                relations: Vec::new(),
            };
            for &d in chunk {
                entity_examples(&model, &graph, train, d, &mut batch.entities);
                let pos = &graph.mention_pos[d];
                let gold = &golds[d];
                let mut positives: Vec<_> = gold.iter().map(|(&(i, j), &l)| (i, j, l)).collect();
                positives.sort_unstable();
                batch.relations.extend(positives.iter().map(|&(i, j, l)| (pos[i], pos[j], l)));
                let negatives: Vec<(usize, usize)> = graph.candidates[d]
                    .iter()
                    .copied()
                    .filter(|p| !gold.contains_key(p))
                    .collect();
                let wanted = config.neg_ratio * gold.len().max(1);
                batch.relations.extend(
                    negatives
                        .choose_multiple(&mut neg_rng, wanted)
                        .map(|&(i, j)| (pos[i], pos[j], 0)),
                );
            }
            let (loss, grads) = model.loss_and_grads(&graph, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            let mut flat: Vec<&[f64]> = vec![grads.proj_sk.data(), grads.proj_gk.data()];
            flat.extend(grads.gcn.iter().map(Matrix::data));
            flat.extend(grads.entity.tensors());
            flat.extend(grads.relation.tensors());
            adam.step(&mut model.params_mut(), &flat)?;
            if !model.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss: f64::NAN });
            }
            epoch_loss += loss;
            steps += 1;
        }
        let mut record = EpochRecord {
            epoch,
            loss: epoch_loss / steps as f64,
            dev_entity_f1: None,
            dev_relation_f1: None,
        };
        if let (Some(docs), Some(dg)) = (dev, dev_graph.as_ref()) {
            let metrics = evaluate_predictions(docs, &model.predict(dg, docs)?)?;
            record.dev_entity_f1 = Some(metrics.entity.f1);
            record.dev_relation_f1 = Some(metrics.relation.f1);
            let better = best.as_ref().is_none_or(|(r, e, ..)| {
                (metrics.relation.f1, metrics.entity.f1) > (*r, *e)
            });
            if better {
                best = Some((metrics.relation.f1, metrics.entity.f1, epoch, model.clone(), metrics));
            }
        }
        history.push(record);
    }

    let (model, best_epoch, best_dev) = match best {
        Some((_, _, epoch, m, metrics)) => (m, epoch, Some(metrics)),
        None => (model, config.epochs, None),
    };
    Ok(TaskTraining {
        model,
        history,
        best_epoch,
        best_dev,
        sk_nodes: graph.sk_count(),
        gk_nodes: graph.gk_count(),
        gk_mention_share: graph.gk_mention_share(),
    })
}
