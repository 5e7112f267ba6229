//! Task documents, the specific-knowledge graph, the fusion GCN and its
//! entity/relation heads, and micro-F1 evaluation.

mod document;
mod gcn;
mod graph;
mod metrics;
mod model;

pub use document::{normalize_surface, read_documents, Mention, RelationAnnotation, TaskDocument};
pub use gcn::{gcn_forward, propagate, Gcn, GcnCache, GcnLayer};
pub use graph::{
    build_sk_graph, FusionGraph, FusionNode, FusionNodeKind, GkLink, GraphConfig, LinkKind, LinkSource,
    NodeRef, NormalizedAdjacency, SkNode, TaskGraph,
};
pub use metrics::{evaluate_predictions, prf, DocPrediction, LabelMetrics, MetricsReport, Prf};
pub use model::{
    train_task, EpochRecord, Labels, PreparedGraph, TaskConfig, TaskModel, TaskTraining, KGXM_MAGIC, KGXM_VERSION,
    NO_RELATION, NULL_ENTITY,
};
