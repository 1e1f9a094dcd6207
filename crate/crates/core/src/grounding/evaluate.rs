//! Classification metrics on a split of one or more scene graphs.

use std::time::Instant;

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegraph::{SceneGraph, Split};

/// Anything that maps a scene graph to per-node class distributions.
pub trait Predictor {
    /// `|V| x m` row distributions.
    fn predict_probs(&self, graph: &SceneGraph) -> Result<Tensor>;
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: Split,
    /// Labeled nodes evaluated.
    pub nodes: usize,
    /// Zero when no node was evaluated.
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Accuracy over nodes whose true class was masked during training.
    pub masked_class_accuracy: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Mean wall-clock seconds per graph for the eval-mode forward pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_seconds_per_graph: Option<f64>,
}

pub fn evaluate(
    predictor: &dyn Predictor,
    graph: &SceneGraph,
    split: Split,
    masked_classes: &[usize],
    timed: bool,
) -> Result<Metrics> {
    evaluate_many(predictor, std::slice::from_ref(graph), split, masked_classes, timed)
}

/// Pools labeled nodes of `split` across `graphs`.
pub fn evaluate_many(
    predictor: &dyn Predictor,
    graphs: &[SceneGraph],
    split: Split,
    masked_classes: &[usize],
    timed: bool,
) -> Result<Metrics> {
    let m = graphs
        .first()
        .map(SceneGraph::num_classes)
        .ok_or_else(|| Error::Graph("nothing to evaluate".into()))?;
    let mut confusion = vec![vec![0usize; m]; m];
    let mut seconds = 0.0;
    for graph in graphs {
        if graph.num_classes() != m {
            return Err(Error::Graph("graphs disagree on the number of classes".into()));
        }
        let start = Instant::now();
        let probs = predictor.predict_probs(graph)?;
        seconds += start.elapsed().as_secs_f64();
        if probs.shape() != [graph.num_nodes(), m] {
            return Err(Error::Dimension(format!(
                "predictor returned {:?}, expected [{}, {m}]",
                probs.shape(),
                graph.num_nodes()
            )));
        }
        for (v, label) in graph.labeled(split) {
            confusion[label][argmax(probs.row(v))] += 1;
        }
    }

    let ratio = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
    let per_class: Vec<Option<f64>> = (0..m)
        .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
        .collect();
    let nodes: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..m).map(|c| confusion[c][c]).sum();
    let masked_total: usize = masked_classes
        .iter()
        .filter(|&&c| c < m)
        .map(|&c| confusion[c].iter().sum::<usize>())
        .sum();
    let masked_hit: usize = masked_classes
        .iter()
        .filter(|&&c| c < m)
        .map(|&c| confusion[c][c])
        .sum();
    Ok(Metrics {
        split,
        nodes,
        accuracy: ratio(correct, nodes).unwrap_or(0.0),
        per_class_accuracy: per_class,
        masked_class_accuracy: ratio(masked_hit, masked_total),
        confusion,
        inference_seconds_per_graph: timed.then(|| seconds / graphs.len() as f64),
    })
}
