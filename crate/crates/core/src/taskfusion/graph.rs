use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::document::{normalize_surface, TaskDocument};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::gkstore::GkStore;
use crate::numerics::{cosine, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Mentions at most this many sentences apart co-occur.
    pub window: usize,
    /// Cosine links from each SK node to its top-k GK nodes; zero disables them.
    pub link_top_k: usize,
    pub link_tau: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window: 0,
            link_top_k: 0,
            link_tau: 0.7,
        }
    }
}

/// A task-specific entity node: one per distinct normalized surface that
/// does not match the GK store.
#[derive(Debug, Clone, PartialEq)]
pub struct SkNode {
    pub key: String,
    pub feature: Vector,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Sk(usize),
    Gk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Surface,
    Cuid,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkSource {
    Mention { doc: usize, mention: usize },
    SkNode(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GkLink {
    pub source: LinkSource,
    pub gk_id: String,
    pub score: f64,
    pub kind: LinkKind,
}

/// The specific-knowledge graph over task mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub sk_nodes: Vec<SkNode>,
    /// Undirected SK–SK co-occurrence edges, `a < b`.
    pub sk_edges: Vec<(usize, usize)>,
    /// Undirected SK–GK co-occurrence edges.
    pub cross_edges: Vec<(usize, String)>,
    pub links: Vec<GkLink>,
    /// Graph node of every mention, per document.
    pub mention_nodes: Vec<Vec<NodeRef>>,
}

struct GkIndex<'a> {
    by_surface: HashMap<String, &'a str>,
    by_cuid: HashMap<&'a str, &'a str>,
}

impl<'a> GkIndex<'a> {
    fn new(gk: Option<&'a GkStore>) -> Self {
        let mut by_surface = HashMap::new();
        let mut by_cuid = HashMap::new();
        // Nodes iterate in id order, so the smallest id wins a shared surface.
        for node in gk.into_iter().flat_map(GkStore::nodes) {
            by_surface
                .entry(normalize_surface(&node.entity.surface))
                .or_insert(node.entity.id.as_str());
            if let Some(c) = &node.entity.cuid {
                by_cuid.entry(c.as_str()).or_insert(node.entity.id.as_str());
            }
        }
        Self { by_surface, by_cuid }
    }

    fn matches(&self, surface_key: &str, cuid: Option<&str>) -> Option<(&'a str, LinkKind)> {
        if let Some(id) = cuid.and_then(|c| self.by_cuid.get(c)) {
            return Some((id, LinkKind::Cuid));
        }
        self.by_surface
            .get(surface_key)
            .map(|id| (*id, LinkKind::Surface))
    }
}

/// Builds the SK graph for `docs`. Mentions that match a GK entity by cuid
/// or normalized surface become links to that entity instead of SK nodes.
pub fn build_sk_graph(
    docs: &[TaskDocument],
    gk: Option<&GkStore>,
    provider: &dyn EmbeddingProvider,
    config: &GraphConfig,
) -> Result<TaskGraph> {
    let index = GkIndex::new(gk);
    let mut sk_keys: BTreeMap<String, usize> = BTreeMap::new();
    let mut sk_order: Vec<String> = Vec::new();
    let mut links = Vec::new();
    let mut mention_nodes = Vec::with_capacity(docs.len());

    for (d, doc) in docs.iter().enumerate() {
        let mut nodes = Vec::with_capacity(doc.mentions.len());
        for (m, mention) in doc.mentions.iter().enumerate() {
            let key = normalize_surface(doc.surface(m));
            match index.matches(&key, mention.cuid.as_deref()) {
                Some((gk_id, kind)) => {
                    links.push(GkLink {
                        source: LinkSource::Mention { doc: d, mention: m },
                        gk_id: gk_id.to_owned(),
                        score: 1.0,
                        kind,
                    });
                    nodes.push(NodeRef::Gk(gk_id.to_owned()));
                }
                None => {
                    let next = sk_order.len();
                    let idx = *sk_keys.entry(key.clone()).or_insert_with(|| {
                        sk_order.push(key);
                        next
                    });
                    nodes.push(NodeRef::Sk(idx));
                }
            }
        }
        mention_nodes.push(nodes);
    }

    let features = sk_order
        .par_iter()
        .map(|key| provider.embed(key))
        .collect::<Result<Vec<_>>>()?;
    let sk_nodes: Vec<SkNode> = sk_order
        .into_iter()
        .zip(features)
        .map(|(key, feature)| SkNode { key, feature })
        .collect();

    let mut sk_edges = BTreeSet::new();
    let mut cross_edges = BTreeSet::new();
    for (doc, nodes) in docs.iter().zip(&mention_nodes) {
        let sentences = doc.sentence_indices();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if sentences[i].abs_diff(sentences[j]) > config.window {
                    continue;
                }
                match (&nodes[i], &nodes[j]) {
                    (NodeRef::Sk(a), NodeRef::Sk(b)) if a != b => {
                        sk_edges.insert((*a.min(b), *a.max(b)));
                    }
                    (NodeRef::Sk(a), NodeRef::Gk(g)) | (NodeRef::Gk(g), NodeRef::Sk(a)) => {
                        cross_edges.insert((*a, g.clone()));
                    }
                    _ => {}
                }
            }
        }
    }

    if config.link_top_k > 0 {
        if let Some(gk) = gk {
            for (i, node) in sk_nodes.iter().enumerate() {
                let mut scored: Vec<(f64, &str)> = gk
                    .nodes()
                    .filter(|n| n.initial_vec().dim() == node.feature.dim())
                    .filter_map(|n| {
                        cosine(&node.feature, n.initial_vec())
                            .ok()
                            .map(|c| (c, n.entity.id.as_str()))
                    })
                    .filter(|(c, _)| *c >= config.link_tau)
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
                for (score, id) in scored.into_iter().take(config.link_top_k) {
                    links.push(GkLink {
                        source: LinkSource::SkNode(i),
                        gk_id: id.to_owned(),
                        score,
                        kind: LinkKind::Cosine,
                    });
                }
            }
        }
    }

    Ok(TaskGraph {
        sk_nodes,
        sk_edges: sk_edges.into_iter().collect(),
        cross_edges: cross_edges.into_iter().collect(),
        links,
        mention_nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionNodeKind {
    Sk(usize),
    Gk(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionNode {
    /// Stable identity, `sk:<surface>` or `gk:<id>`.
    pub key: String,
    pub kind: FusionNodeKind,
}

impl FusionNode {
    pub fn is_gk(&self) -> bool {
        matches!(self.kind, FusionNodeKind::Gk(_))
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` as neighbor lists.
///
/// Each row lists its neighbors (self included) sorted by node key, so a
/// relabeling of the nodes permutes rows without changing any sum order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn new(keys: &[&str], edges: &[(usize, usize)]) -> Result<Self> {
        let n = keys.len();
        let mut neighbors: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            neighbors[a].insert(b);
            neighbors[b].insert(a);
        }
        let degree: Vec<f64> = neighbors.iter().map(|s| s.len() as f64).collect();
        let rows = neighbors
            .iter()
            .enumerate()
            .map(|(i, set)| {
                let mut row: Vec<(usize, f64)> = set
                    .iter()
                    .map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt()))
                    .collect();
                row.sort_by(|x, y| keys[x.0].cmp(keys[y.0]));
                row
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, row)| {
            row.iter()
                .all(|&(j, v)| self.rows[j].iter().any(|&(k, w)| k == i && w == v))
        })
    }

    pub fn to_dense(&self) -> crate::numerics::Matrix {
        let mut m = crate::numerics::Matrix::zeros(self.len(), self.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m.set(i, j, v);
            }
        }
        m
    }
}

/// Union of SK nodes and the GK nodes they reach, with SK–SK and SK–GK edges
/// only.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGraph {
    nodes: Vec<FusionNode>,
    edges: Vec<(usize, usize)>,
    adjacency: NormalizedAdjacency,
    index: HashMap<String, usize>,
}

impl FusionGraph {
    /// Rejects duplicate keys, self loops and any edge between two GK nodes.
    pub fn new(nodes: Vec<FusionNode>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.key.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate fusion node {:?}", n.key)));
            }
        }
        let mut normalized = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= nodes.len() || b >= nodes.len() || a == b {
                return Err(Error::invalid(format!("invalid edge ({a}, {b})")));
            }
            if nodes[a].is_gk() && nodes[b].is_gk() {
                return Err(Error::invalid(format!(
                    "edge between GK nodes {:?} and {:?}",
                    nodes[a].key, nodes[b].key
                )));
            }
            normalized.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = normalized.into_iter().collect();
        let keys: Vec<&str> = nodes.iter().map(|n| n.key.as_str()).collect();
        let adjacency = NormalizedAdjacency::new(&keys, &edges)?;
        Ok(Self {
            nodes,
            edges,
            adjacency,
            index,
        })
    }

    pub fn from_task(task: &TaskGraph) -> Result<Self> {
        let mut nodes: Vec<FusionNode> = task
            .sk_nodes
            .iter()
            .enumerate()
            .map(|(i, n)| FusionNode {
                key: format!("sk:{}", n.key),
                kind: FusionNodeKind::Sk(i),
            })
            .collect();
        let gk_ids: BTreeSet<&str> = task
            .mention_nodes
            .iter()
            .flatten()
            .filter_map(|n| match n {
                NodeRef::Gk(id) => Some(id.as_str()),
                NodeRef::Sk(_) => None,
            })
            .chain(task.cross_edges.iter().map(|(_, g)| g.as_str()))
            .chain(task.links.iter().map(|l| l.gk_id.as_str()))
            .collect();
        let gk_offset = nodes.len();
        let gk_pos: HashMap<&str, usize> = gk_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, gk_offset + i))
            .collect();
        nodes.extend(gk_ids.iter().map(|id| FusionNode {
            key: format!("gk:{id}"),
            kind: FusionNodeKind::Gk(id.to_string()),
        }));

        let mut edges: Vec<(usize, usize)> = task.sk_edges.clone();
        edges.extend(task.cross_edges.iter().map(|(a, g)| (*a, gk_pos[g.as_str()])));
        edges.extend(task.links.iter().filter_map(|l| match l.source {
            LinkSource::SkNode(a) => Some((a, gk_pos[l.gk_id.as_str()])),
            LinkSource::Mention { .. } => None,
        }));
        Self::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[FusionNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, node: &NodeRef, task: &TaskGraph) -> usize {
        let key = match node {
            NodeRef::Sk(i) => format!("sk:{}", task.sk_nodes[*i].key),
            NodeRef::Gk(id) => format!("gk:{id}"),
        };
        self.index[&key]
    }

    pub fn gk_gk_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|(a, b)| self.nodes[*a].is_gk() && self.nodes[*b].is_gk())
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::ToyAdditiveEmbedder;
    use crate::gkstore::{GkNode, GkProvenance, GkTrainConfig};
    use crate::relweights::{Entity, Schema};
    use crate::taskfusion::document::Mention;

    fn mention(start: usize, end: usize) -> Mention {
        Mention { start, end, entity_type: "T".into(), cuid: None }
    }

    fn gk(entities: &[(&str, &str)]) -> GkStore {
        let toy = ToyAdditiveEmbedder::new(4, 0).unwrap();
        let nodes = entities
            .iter()
            .map(|(id, surface)| {
                GkNode::new(Entity::new(*id, *surface), toy.embed(surface).unwrap(), Vector::zeros(2)).unwrap()
            })
            .collect();
        let provenance = GkProvenance {
            source: "t".into(),
            config_hash: String::new(),
            config: GkTrainConfig::default(),
            anchor_regularized: true,
            final_loss: 0.0,
            output_variance: 1.0,
            collapse_warning: false,
        };
        let mut s = GkStore::new(nodes, Schema::umls_default(), provenance).unwrap();
        s.freeze();
        s
    }

    #[test]
    fn all_mentions_in_gk() {
        let doc = TaskDocument {
            id: "d".into(),
            text: "flu causes fever.".into(),
            mentions: vec![mention(0, 3), mention(11, 16)],
            relations: vec![],
        };
        let store = gk(&[("e1", "Flu"), ("e2", "fever")]);
        let toy = ToyAdditiveEmbedder::new(4, 0).unwrap();
        let g = build_sk_graph(&[doc], Some(&store), &toy, &GraphConfig::default()).unwrap();
        assert!(g.sk_nodes.is_empty());
        assert_eq!(g.links.len(), 2);
        let fusion = FusionGraph::from_task(&g).unwrap();
        assert_eq!(fusion.len(), 2);
        assert!(fusion.edges().is_empty());
    }

    #[test]
    fn two_sk_mentions_one_edge() {
        let doc = TaskDocument {
            id: "d".into(),
            text: "alpha binds beta. gamma".into(),
            mentions: vec![mention(0, 5), mention(12, 16), mention(18, 23)],
            relations: vec![],
        };
        let toy = ToyAdditiveEmbedder::new(4, 0).unwrap();
        let g = build_sk_graph(std::slice::from_ref(&doc), None, &toy, &GraphConfig::default()).unwrap();
        assert_eq!(g.sk_nodes.len(), 3);
        assert_eq!(g.sk_edges, vec![(0, 1)]);
        assert!(g.links.is_empty());

        let wide = GraphConfig { window: 1, ..GraphConfig::default() };
        let g = build_sk_graph(&[doc], None, &toy, &wide).unwrap();
        assert_eq!(g.sk_edges.len(), 3);
    }

    #[test]
    fn cross_edges_and_cosine_links() {
        let doc = TaskDocument {
            id: "d".into(),
            text: "alpha binds beta and delta".into(),
            mentions: vec![mention(0, 5), mention(12, 16), mention(21, 26)],
            relations: vec![],
        };
        let store = gk(&[("b", "beta"), ("d", "delta"), ("z", "alpha")]);
        let toy = ToyAdditiveEmbedder::new(4, 0).unwrap();
        // "alpha" matches GK entity z by surface; make it SK by renaming.
        let store2 = gk(&[("b", "beta"), ("d", "delta"), ("z", "alpha two")]);
        let g = build_sk_graph(std::slice::from_ref(&doc), Some(&store2), &toy, &GraphConfig::default()).unwrap();
        assert_eq!(g.sk_nodes.len(), 1);
        assert_eq!(g.cross_edges, vec![(0, "b".to_string()), (0, "d".to_string())]);
        let fusion = FusionGraph::from_task(&g).unwrap();
        assert_eq!(fusion.gk_gk_edge_count(), 0);
        assert_eq!(fusion.edges().len(), 2);

        let cfg = GraphConfig { link_top_k: 1, link_tau: -1.0, ..GraphConfig::default() };
        let g = build_sk_graph(&[doc], Some(&store2), &toy, &cfg).unwrap();
        assert!(g.links.iter().any(|l| l.kind == LinkKind::Cosine));
        let _ = store;
    }

    #[test]
    fn gk_gk_edges_rejected() {
        let nodes = vec![
            FusionNode { key: "gk:a".into(), kind: FusionNodeKind::Gk("a".into()) },
            FusionNode { key: "gk:b".into(), kind: FusionNodeKind::Gk("b".into()) },
        ];
        assert!(FusionGraph::new(nodes, vec![(0, 1)]).is_err());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let keys = ["a", "b", "c", "d"];
        let adj = NormalizedAdjacency::new(&keys, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        assert!(adj.is_symmetric());
        let dense = adj.to_dense();
        assert_eq!(dense, dense.transpose());
        assert!((dense.get(0, 1) - 1.0 / (2.0f64 * 4.0).sqrt()).abs() < 1e-15);
    }
}
