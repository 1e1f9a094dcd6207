//! Scalar forms of the grounding predicates, plus the per-node ontology
//! targets shared by the tape versions.

use crate::error::{Error, Result};
use crate::ontology::SpatialOntology;
use crate::scenegraph::SceneGraph;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y^T p` for a one-hot `label`.
pub fn is_class_of(probs: &[f64], label_onehot: &[f64]) -> Result<f64> {
    if probs.len() != label_onehot.len() {
        return Err(Error::Dimension(format!(
            "is_class_of: {} probabilities vs {} label entries",
            probs.len(),
            label_onehot.len()
        )));
    }
    let ones = label_onehot.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || label_onehot.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Dimension("is_class_of: label is not one-hot".into()));
    }
    Ok(dot(probs, label_onehot))
}

/// `omega_hat q_hat` for an `m x n` row-major matrix.
pub fn ontology_target(omega_hat: &[f64], m: usize, q_hat: &[f64]) -> Result<Vec<f64>> {
    let n = q_hat.len();
    if omega_hat.len() != m * n {
        return Err(Error::Dimension(format!(
            "normalized ontology has {} entries, expected {m} x {n}",
            omega_hat.len()
        )));
    }
    Ok((0..m).map(|h| dot(&omega_hat[h * n..(h + 1) * n], q_hat)).collect())
}

/// `sum(omega_hat q_hat)`: the histogram mass on low-level concepts that have
/// at least one ontology edge.
pub fn is_valid(omega_hat: &[f64], m: usize, q_hat: &[f64]) -> Result<f64> {
    Ok(ontology_target(omega_hat, m, q_hat)?.iter().sum())
}

/// `p^T (omega_hat q_hat)`.
pub fn is_similar(probs: &[f64], omega_hat: &[f64], q_hat: &[f64]) -> Result<f64> {
    let target = ontology_target(omega_hat, probs.len(), q_hat)?;
    Ok(dot(probs, &target))
}

/// Fails unless the graph and ontology share both vocabularies, in order.
pub fn check_alignment(graph: &SceneGraph, ontology: &SpatialOntology) -> Result<()> {
    if graph.low_levels != ontology.low_levels() {
        return Err(Error::Ontology(
            "scene graph and ontology disagree on low-level concepts".into(),
        ));
    }
    if graph.high_levels != ontology.high_levels() {
        return Err(Error::Ontology(
            "scene graph and ontology disagree on high-level concepts".into(),
        ));
    }
    Ok(())
}

/// Per-node `omega_hat q_hat` rows (`|V| x m`) and their sums.
#[derive(Clone, Debug, PartialEq)]
pub struct OntologyTargets {
    pub num_classes: usize,
    pub targets: Vec<f64>,
    pub validity: Vec<f64>,
}

impl OntologyTargets {
    pub fn new(graph: &SceneGraph, ontology: &SpatialOntology) -> Result<Self> {
        check_alignment(graph, ontology)?;
        let m = ontology.num_high();
        let omega_hat = ontology.normalized_biadjacency();
        let mut targets = Vec::with_capacity(graph.num_nodes() * m);
        let mut validity = Vec::with_capacity(graph.num_nodes());
        for v in 0..graph.num_nodes() {
            let t = ontology_target(&omega_hat, m, &graph.normalized_histogram(v))?;
            validity.push(t.iter().sum());
            targets.extend(t);
        }
        Ok(Self {
            num_classes: m,
            targets,
            validity,
        })
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.targets[node * self.num_classes..(node + 1) * self.num_classes]
    }
}
