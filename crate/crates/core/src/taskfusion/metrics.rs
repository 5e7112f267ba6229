use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::document::{RelationAnnotation, TaskDocument};
use crate::error::{Error, Result};

/// Precision, recall and F1 from raw counts; empty denominators give 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Prf { p, r, f1, tp, fp, fn_ }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_type: BTreeMap<String, Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub entity: LabelMetrics,
    pub relation: LabelMetrics,
}

/// Model output for one document. `entities[i]` is the type of mention `i`,
/// `None` for the null label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DocPrediction {
    pub entities: Vec<Option<String>>,
    pub relations: Vec<RelationAnnotation>,
}

fn score<K: Ord + Clone>(gold: &BTreeSet<(K, String)>, predicted: &BTreeSet<(K, String)>) -> LabelMetrics {
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for item in predicted {
        let slot = if gold.contains(item) { 0 } else { 1 };
        counts.entry(item.1.clone()).or_default()[slot] += 1;
    }
    for item in gold.difference(predicted) {
        counts.entry(item.1.clone()).or_default()[2] += 1;
    }
    let total = counts
        .values()
        .fold([0; 3], |acc, c| [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]);
    let micro = prf(total[0], total[1], total[2]);
    LabelMetrics {
        p: micro.p,
        r: micro.r,
        f1: micro.f1,
        tp: micro.tp,
        fp: micro.fp,
        fn_: micro.fn_,
        per_type: counts.into_iter().map(|(k, c)| (k, prf(c[0], c[1], c[2]))).collect(),
    }
}

type Span = (usize, usize);

/// Micro-averaged scores. An entity counts when span and type match; a
/// relation when both spans, the direction and the type match.
pub fn evaluate_predictions(docs: &[TaskDocument], predictions: &[DocPrediction]) -> Result<MetricsReport> {
    if docs.len() != predictions.len() {
        return Err(Error::dim(docs.len(), predictions.len()));
    }
    let mut gold_e = BTreeSet::new();
    let mut pred_e = BTreeSet::new();
    let mut gold_r = BTreeSet::new();
    let mut pred_r = BTreeSet::new();
    for (doc, pred) in docs.iter().zip(predictions) {
        if pred.entities.len() != doc.mentions.len() {
            return Err(Error::dim(doc.mentions.len(), pred.entities.len()));
        }
        let span = |i: usize| -> Span { (doc.mentions[i].start, doc.mentions[i].end) };
        for (i, m) in doc.mentions.iter().enumerate() {
            gold_e.insert(((doc.id.clone(), span(i)), m.entity_type.clone()));
            if let Some(t) = &pred.entities[i] {
                pred_e.insert(((doc.id.clone(), span(i)), t.clone()));
            }
        }
        for r in &doc.relations {
            gold_r.insert(((doc.id.clone(), span(r.head), span(r.tail)), r.relation_type.clone()));
        }
        for r in &pred.relations {
            if r.head >= doc.mentions.len() || r.tail >= doc.mentions.len() {
                return Err(Error::invalid(format!("predicted relation outside document {:?}", doc.id)));
            }
            pred_r.insert(((doc.id.clone(), span(r.head), span(r.tail)), r.relation_type.clone()));
        }
    }
    Ok(MetricsReport {
        entity: score(&gold_e, &pred_e),
        relation: score(&gold_r, &pred_r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskfusion::document::Mention;

    fn doc(id: &str) -> TaskDocument {
        TaskDocument {
            id: id.into(),
            text: "aa bb cc".into(),
            mentions: vec![
                Mention { start: 0, end: 2, entity_type: "X".into(), cuid: None },
                Mention { start: 3, end: 5, entity_type: "Y".into(), cuid: None },
                Mention { start: 6, end: 8, entity_type: "Y".into(), cuid: None },
            ],
            relations: vec![RelationAnnotation { head: 0, tail: 1, relation_type: "r".into() }],
        }
    }

    fn perfect(d: &TaskDocument) -> DocPrediction {
        DocPrediction {
            entities: d.mentions.iter().map(|m| Some(m.entity_type.clone())).collect(),
            relations: d.relations.clone(),
        }
    }

    #[test]
    fn prf_arithmetic() {
        let m = prf(1, 1, 1);
        assert_eq!((m.p, m.r, m.f1), (0.5, 0.5, 0.5));
        assert_eq!(prf(0, 0, 0).f1, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let docs = vec![doc("a"), doc("b")];
        let preds: Vec<_> = docs.iter().map(perfect).collect();
        let m = evaluate_predictions(&docs, &preds).unwrap();
        assert_eq!(m.entity.f1, 1.0);
        assert_eq!(m.relation.f1, 1.0);
    }

    #[test]
    fn one_of_each_error() {
        let docs = vec![doc("a")];
        let pred = DocPrediction {
            entities: vec![Some("X".into()), Some("X".into()), None],
            relations: vec![RelationAnnotation { head: 1, tail: 0, relation_type: "r".into() }],
        };
        let m = evaluate_predictions(&docs, &[pred]).unwrap();
        assert_eq!((m.entity.tp, m.entity.fp, m.entity.fn_), (1, 1, 2));
        assert_eq!((m.relation.tp, m.relation.fp, m.relation.fn_), (0, 1, 1));
        assert_eq!(m.entity.per_type["Y"].fn_, 2);
    }

    #[test]
    fn document_order_does_not_matter() {
        let docs = vec![doc("a"), doc("b")];
        let mut preds: Vec<_> = docs.iter().map(perfect).collect();
        preds[1].entities[2] = Some("X".into());
        let forward = evaluate_predictions(&docs, &preds).unwrap();
        let rev_docs: Vec<_> = docs.iter().rev().cloned().collect();
        let rev_preds: Vec<_> = preds.iter().rev().cloned().collect();
        assert_eq!(forward, evaluate_predictions(&rev_docs, &rev_preds).unwrap());
    }
}
