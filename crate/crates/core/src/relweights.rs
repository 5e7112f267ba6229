//! Relation weights from masked-sentence embedding arithmetic.
//!
//! For a candidate triple `(s, r, o)` four sentences are embedded:
//!
//! | sentence | text          |
//! |----------|---------------|
//! | A        | `s [MASK] o`  |
//! | B        | `s r [MASK]`  |
//! | C        | `[MASK] r o`  |
//! | D        | `s r o`       |
//!
//! `v_E = v_B + v_C - v_A` is the fourth vertex of the parallelogram on
//! `A, B, C`, and the relation weight is `cos(v_D, v_E)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingProvider, MASK_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::{cosine, Vector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuid: Option<String>,
}

impl Entity {
    pub fn new(id: impl Into<String>, surface: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            surface: surface.into(),
            cuid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: String,
    pub verbalization: String,
}

impl RelationType {
    pub fn new(id: impl Into<String>, verbalization: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            verbalization: verbalization.into(),
        }
    }
}

/// A `(subject, relation, object)` fact over entity and relation ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    #[serde(rename = "s")]
    pub subject: String,
    #[serde(rename = "r")]
    pub relation: String,
    #[serde(rename = "o")]
    pub object: String,
    #[serde(default = "default_gold", skip_serializing)]
    pub gold: bool,
}

fn default_gold() -> bool {
    true
}

impl Triple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            gold: true,
        }
    }
}

/// Entities indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(entities: Vec<Entity>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if e.id.is_empty() {
                return Err(Error::format("entity with empty id"));
            }
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate entity id {:?}", e.id)));
            }
        }
        Ok(Self { entities, index })
    }

    pub fn get(&self, id: &str) -> Result<&Entity> {
        self.index
            .get(id)
            .map(|&i| &self.entities[i])
            .ok_or_else(|| Error::format(format!("unknown entity id {id:?}")))
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Ordered relation types. Declaration order breaks prediction ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    relations: Vec<RelationType>,
}

impl Schema {
    pub fn new(relations: Vec<RelationType>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &relations {
            if r.verbalization.trim().is_empty() {
                return Err(Error::format(format!("relation {:?} has an empty verbalization", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::format(format!("duplicate relation id {:?}", r.id)));
            }
        }
        Ok(Self { relations })
    }

    /// The five grouped relations of the restricted UMLS source.
    pub fn umls_default() -> Self {
        let names = [
            "drug used for treatment",
            "physiologic effect",
            "has symptoms",
            "clinically associated",
            "drug agent",
        ];
        Self {
            relations: names
                .iter()
                .map(|n| RelationType::new(n.replace(' ', "_"), *n))
                .collect(),
        }
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn get(&self, id: &str) -> Result<&RelationType> {
        self.relations
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::format(format!("unknown relation id {id:?}")))
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSentences {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

impl MaskedSentences {
    pub fn all(&self) -> [&str; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }
}

pub fn build_masked_sentences(
    subject: &str,
    relation: &str,
    object: &str,
) -> Result<MaskedSentences> {
    for (name, field) in [("subject", subject), ("relation", relation), ("object", object)] {
        if field.trim().is_empty() {
            return Err(Error::invalid(format!("empty {name}")));
        }
    }
    Ok(MaskedSentences {
        a: format!("{subject} {MASK_TOKEN} {object}"),
        b: format!("{subject} {relation} {MASK_TOKEN}"),
        c: format!("{MASK_TOKEN} {relation} {object}"),
        d: format!("{subject} {relation} {object}"),
    })
}

/// Embeddings of sentences A–D and the derived vertex `v_e = v_b + v_c - v_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceQuad {
    pub v_a: Vector,
    pub v_b: Vector,
    pub v_c: Vector,
    pub v_d: Vector,
    pub v_e: Vector,
}

impl SentenceQuad {
    pub fn new(v_a: Vector, v_b: Vector, v_c: Vector, v_d: Vector) -> Result<Self> {
        if v_d.dim() != v_a.dim() {
            return Err(Error::dim(v_a.dim(), v_d.dim()));
        }
        let v_e = v_b.add(&v_c)?.sub(&v_a)?;
        Ok(Self {
            v_a,
            v_b,
            v_c,
            v_d,
            v_e,
        })
    }

    pub fn embed(provider: &dyn EmbeddingProvider, sentences: &MaskedSentences) -> Result<Self> {
        Self::new(
            provider.embed(&sentences.a)?,
            provider.embed(&sentences.b)?,
            provider.embed(&sentences.c)?,
            provider.embed(&sentences.d)?,
        )
    }

    /// `cos(v_d, v_e)`; [`Error::ZeroNorm`] if either is zero.
    pub fn weight(&self) -> Result<f64> {
        cosine(&self.v_d, &self.v_e)
    }
}

/// A triple id together with its relation weight in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTriple {
    #[serde(rename = "s")]
    pub subject: String,
    #[serde(rename = "r")]
    pub relation: String,
    #[serde(rename = "o")]
    pub object: String,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ScoredTriple {
    pub triple: WeightedTriple,
    pub quad: SentenceQuad,
}

pub fn triple_weight(
    provider: &dyn EmbeddingProvider,
    subject: &Entity,
    relation: &RelationType,
    object: &Entity,
) -> Result<ScoredTriple> {
    let sentences = build_masked_sentences(&subject.surface, &relation.verbalization, &object.surface)?;
    let quad = SentenceQuad::embed(provider, &sentences)?;
    let weight = quad.weight()?;
    Ok(ScoredTriple {
        triple: WeightedTriple {
            subject: subject.id.clone(),
            relation: relation.id.clone(),
            object: object.id.clone(),
            weight,
        },
        quad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationPrediction {
    /// Index into the schema of the highest-weighted relation.
    pub best: usize,
    pub best_weight: f64,
    /// One entry per schema relation; `None` where the quad had zero norm.
    pub weights: Vec<Option<f64>>,
}

/// Scores every schema relation for `(subject, object)` and returns the
/// argmax; the earliest relation wins ties.
pub fn predict_relation(
    provider: &dyn EmbeddingProvider,
    subject: &Entity,
    object: &Entity,
    schema: &Schema,
) -> Result<RelationPrediction> {
    if schema.is_empty() {
        return Err(Error::invalid("schema is empty"));
    }
    let mut weights = Vec::with_capacity(schema.len());
    for relation in schema.relations() {
        match triple_weight(provider, subject, relation, object) {
            Ok(scored) => weights.push(Some(scored.triple.weight)),
            Err(Error::ZeroNorm) => weights.push(None),
            Err(e) => return Err(e),
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in weights.iter().enumerate() {
        if let Some(w) = *w {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((i, w));
            }
        }
    }
    let (best, best_weight) = best.ok_or_else(|| {
        Error::Prediction(format!(
            "every relation has a zero-norm quad for ({:?}, {:?})",
            subject.id, object.id
        ))
    })?;
    Ok(RelationPrediction {
        best,
        best_weight,
        weights,
    })
}

/// A predicted relation for one `(subject, object)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub subject: String,
    pub object: String,
    pub relation: String,
    pub weight: f64,
}

/// Gold relations per `(subject, object)` pair.
#[derive(Debug, Clone, Default)]
pub struct GoldIndex {
    pairs: HashMap<(String, String), BTreeSet<String>>,
}

impl GoldIndex {
    pub fn new(triples: &[Triple]) -> Self {
        let mut pairs: HashMap<(String, String), BTreeSet<String>> = HashMap::new();
        for t in triples.iter().filter(|t| t.gold) {
            pairs
                .entry((t.subject.clone(), t.object.clone()))
                .or_default()
                .insert(t.relation.clone());
        }
        Self { pairs }
    }

    pub fn relations(&self, subject: &str, object: &str) -> Option<&BTreeSet<String>> {
        self.pairs.get(&(subject.to_owned(), object.to_owned()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<WeightedTriple>,
    pub total: usize,
    pub correct: usize,
    pub without_gold: usize,
}

/// Keeps the predictions whose relation matches a gold relation for the pair.
pub fn filter_correct(predictions: &[PairPrediction], gold: &GoldIndex) -> FilterOutcome {
    let mut out = FilterOutcome {
        total: predictions.len(),
        ..FilterOutcome::default()
    };
    for p in predictions {
        match gold.relations(&p.subject, &p.object) {
            None => out.without_gold += 1,
            Some(rels) if rels.contains(&p.relation) => {
                out.correct += 1;
                out.kept.push(WeightedTriple {
                    subject: p.subject.clone(),
                    relation: p.relation.clone(),
                    object: p.object.clone(),
                    weight: p.weight,
                });
            }
            Some(_) => {}
        }
    }
    out
}

/// Per-`(subject, relation)` object weights that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedWeights {
    pub subject: String,
    pub relation: String,
    pub entries: Vec<(String, f64)>,
}

impl NormalizedWeights {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalizeOutcome {
    pub groups: Vec<NormalizedWeights>,
    pub dropped_zero_mass: usize,
}

/// Groups by `(subject, relation)`, clamps negative weights to zero and
/// divides by the group's mass. Groups without positive mass are dropped.
/// A repeated `(subject, relation, object)` keeps its first weight.
pub fn normalize_weights(triples: &[WeightedTriple]) -> NormalizeOutcome {
    let mut grouped: BTreeMap<(&str, &str), Vec<(&str, f64)>> = BTreeMap::new();
    for t in triples {
        let entries = grouped.entry((&t.subject, &t.relation)).or_default();
        if entries.iter().all(|(o, _)| *o != t.object) {
            entries.push((&t.object, t.weight.max(0.0)));
        }
    }
    let mut out = NormalizeOutcome::default();
    for ((subject, relation), entries) in grouped {
        let mass: f64 = entries.iter().map(|(_, w)| w).sum();
        if !(mass > 0.0) {
            out.dropped_zero_mass += 1;
            continue;
        }
        out.groups.push(NormalizedWeights {
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            entries: entries
                .into_iter()
                .map(|(o, w)| (o.to_owned(), w / mass))
                .collect(),
        });
    }
    out
}

/// Which `(subject, object)` pairs to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Distinct pairs of the gold triple file.
    #[default]
    Gold,
    /// Every distinct subject against every distinct object.
    CrossProduct,
}

/// One output line of a scoring run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub s: String,
    pub r: String,
    pub o: String,
    pub weight: f64,
    pub predicted: bool,
    pub correct: bool,
}

impl WeightRow {
    pub fn to_weighted(&self) -> WeightedTriple {
        WeightedTriple {
            subject: self.s.clone(),
            relation: self.r.clone(),
            object: self.o.clone(),
            weight: self.weight,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub pairs: usize,
    pub correct: usize,
    pub without_gold: usize,
    pub dropped_zero_norm: usize,
    pub failed_pairs: usize,
    pub dropped_zero_mass_groups: usize,
}

impl ScoreReport {
    pub fn ratio(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.correct as f64 / self.pairs as f64
        }
    }
}

fn candidate_pairs(triples: &[Triple], mode: PairMode) -> Vec<(String, String)> {
    fn distinct<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
        let mut seen = BTreeSet::new();
        items.filter(|x| seen.insert(*x)).collect()
    }
    match mode {
        PairMode::Gold => {
            let mut seen = BTreeSet::new();
            triples
                .iter()
                .map(|t| (t.subject.clone(), t.object.clone()))
                .filter(|p| seen.insert(p.clone()))
                .collect()
        }
        PairMode::CrossProduct => {
            let subjects = distinct(triples.iter().map(|t| t.subject.as_str()));
            let objects = distinct(triples.iter().map(|t| t.object.as_str()));
            subjects
                .iter()
                .flat_map(|s| {
                    objects
                        .iter()
                        .filter(move |o| *o != s)
                        .map(move |o| (s.to_string(), o.to_string()))
                })
                .collect()
        }
    }
}

enum PairOutcome {
    Scored(RelationPrediction),
    Failed,
}

/// Scores candidate pairs against every schema relation.
///
/// Emits one row per `(s, r, o)` with a finite weight; `predicted` marks the
/// argmax relation of each pair and `correct` marks predictions that match
/// gold. Pairs are scored in parallel; the output order is deterministic.
pub fn score_pairs(
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    schema: &Schema,
    triples: &[Triple],
    mode: PairMode,
) -> Result<(Vec<WeightRow>, ScoreReport)> {
    if schema.is_empty() {
        return Err(Error::invalid("schema is empty"));
    }
    for t in triples {
        vocab.get(&t.subject)?;
        vocab.get(&t.object)?;
        schema.get(&t.relation)?;
    }
    let gold = GoldIndex::new(triples);
    let pairs = candidate_pairs(triples, mode);

    let outcomes: Vec<Result<PairOutcome>> = pairs
        .par_iter()
        .map(|(s, o)| {
            let subject = vocab.get(s)?;
            let object = vocab.get(o)?;
            match predict_relation(provider, subject, object, schema) {
                Ok(p) => Ok(PairOutcome::Scored(p)),
                Err(Error::Prediction(_)) => Ok(PairOutcome::Failed),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    let mut report = ScoreReport {
        pairs: pairs.len(),
        ..ScoreReport::default()
    };
    for ((s, o), outcome) in pairs.iter().zip(outcomes) {
        let prediction = match outcome? {
            PairOutcome::Scored(p) => p,
            PairOutcome::Failed => {
                report.failed_pairs += 1;
                report.dropped_zero_norm += schema.len();
                continue;
            }
        };
        let gold_rels = gold.relations(s, o);
        for (k, (relation, weight)) in schema.relations().iter().zip(&prediction.weights).enumerate() {
            let Some(weight) = *weight else {
                report.dropped_zero_norm += 1;
                continue;
            };
            let predicted = k == prediction.best;
            let correct = predicted && gold_rels.is_some_and(|g| g.contains(&relation.id));
            rows.push(WeightRow {
                s: s.clone(),
                r: relation.id.clone(),
                o: o.clone(),
                weight,
                predicted,
                correct,
            });
        }
        predictions.push(PairPrediction {
            subject: s.clone(),
            object: o.clone(),
            relation: schema.relations()[prediction.best].id.clone(),
            weight: prediction.best_weight,
        });
    }

    let filtered = filter_correct(&predictions, &gold);
    report.correct = filtered.correct;
    report.without_gold = filtered.without_gold;
    report.dropped_zero_mass_groups = normalize_weights(&filtered.kept).dropped_zero_mass;
    Ok((rows, report))
}

/// The surviving triples of a scoring run: predicted and correct.
pub fn correct_triples(rows: &[WeightRow]) -> Vec<WeightedTriple> {
    rows.iter()
        .filter(|r| r.predicted && r.correct)
        .map(WeightRow::to_weighted)
        .collect()
}
