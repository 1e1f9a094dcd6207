//! Agreement between an ontology and human relation judgments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpatialOntology;
use crate::error::{Error, Result};
use crate::jsonio::read_json;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Likely,
    Sometimes,
    Rarely,
}

impl RelationLabel {
    /// Only "likely" counts as a positive relation.
    pub fn is_positive(self) -> bool {
        self == Self::Likely
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub low: String,
    pub high: String,
    pub label: RelationLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OntologyMetrics {
    pub accuracy: f64,
    /// 0 when the ontology predicts no judged edge.
    pub precision: f64,
    /// 0 when no judgment is positive.
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

pub fn load_judgments(path: &Path) -> Result<Vec<Judgment>> {
    read_json(path)
}

/// Treats edge presence as the prediction for each judged pair.
pub fn evaluate_against_reference(onto: &SpatialOntology, judgments: &[Judgment]) -> Result<OntologyMetrics> {
    if judgments.is_empty() {
        return Err(Error::Config("no judgments to evaluate against".into()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for j in judgments {
        let l = onto
            .low_index(&j.low)
            .ok_or_else(|| Error::UnknownConcept(j.low.clone()))?;
        let h = onto
            .high_index(&j.high)
            .ok_or_else(|| Error::UnknownConcept(j.high.clone()))?;
        match (onto.has_edge(h, l), j.label.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(OntologyMetrics {
        accuracy: ratio(tp + tn, judgments.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
    })
}
