//! Places-layer scene graphs.
//!
//! Each place node carries a 3D position and a histogram of low-level
//! semantic labels collected from its basis points; region labels are
//! optional. Graphs are immutable values: masking returns a new graph.

mod features;
mod io;
mod masking;
mod synth;

use serde::{Deserialize, Serialize};

pub use features::{encode_features, FeatureEncoder, PositionScaler, RandomProjection, SemanticEncoder};
pub use io::{load, save};
pub use masking::{mask_classes, mask_labels, MaskScope};
pub use synth::{generate_synthetic, knn_edges, planted_ontology, SynthConfig};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaceNode {
    /// Meters.
    pub position: [f64; 3],
    /// Basis-point counts per low-level concept.
    pub histogram: Vec<u32>,
    /// Index into the high-level vocabulary.
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub low_levels: Vec<String>,
    pub high_levels: Vec<String>,
    pub nodes: Vec<PlaceNode>,
    /// Undirected, stored once, no self-loops.
    pub edges: Vec<(usize, usize)>,
}

impl SceneGraph {
    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.low_levels.is_empty() || self.high_levels.is_empty() {
            return Err(Error::Graph("vocabularies must be nonempty".into()));
        }
        let (n, m) = (self.low_levels.len(), self.high_levels.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if node.histogram.len() != n {
                return Err(Error::Graph(format!(
                    "node {i}: histogram has {} bins, expected {n}",
                    node.histogram.len()
                )));
            }
            if let Some(label) = node.label {
                if label >= m {
                    return Err(Error::Graph(format!(
                        "node {i}: label {label} out of range for {m} high-level concepts"
                    )));
                }
            }
            if !node.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Graph(format!("node {i}: non-finite position")));
            }
        }
        let count = self.nodes.len();
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            if u >= count || v >= count {
                return Err(Error::Graph(format!(
                    "edge {k} ({u}, {v}) references a node outside 0..{count}"
                )));
            }
            if u == v {
                return Err(Error::Graph(format!("edge {k} is a self-loop on node {u}")));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.high_levels.len()
    }

    /// Indices of nodes in `split`.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].split == split)
            .collect()
    }

    /// `(node, label)` for labeled nodes in `split`.
    pub fn labeled(&self, split: Split) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.split == split)
            .filter_map(|(i, n)| n.label.map(|l| (i, l)))
            .collect()
    }

    /// The histogram scaled to unit l1 norm; all zeros stays all zeros.
    pub fn normalized_histogram(&self, node: usize) -> Vec<f64> {
        let h = &self.nodes[node].histogram;
        let total: u64 = h.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return vec![0.0; h.len()];
        }
        h.iter().map(|&c| c as f64 / total as f64).collect()
    }
}
