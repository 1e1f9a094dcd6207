//! Node features: scaled position concatenated with an embedding of the
//! normalized label histogram.

use diffcore::rng::stream;
use diffcore::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SceneGraph, Split};
use crate::error::{Error, Result};

/// Embeds an l1-normalized histogram of low-level concepts.
pub trait SemanticEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, normalized_histogram: &[f64]) -> Result<Vec<f64>>;
}

/// Fixed `d x n` matrix with entries `+-1/sqrt(d)` drawn from a seeded stream.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection {
    dim: usize,
    num_low: usize,
    seed: u64,
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(dim: usize, num_low: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut rng = stream(seed, 0x5052_4f4a);
        let scale = 1.0 / (dim as f64).sqrt();
        let matrix = (0..dim * num_low)
            .map(|_| if rng.random_bool(0.5) { scale } else { -scale })
            .collect();
        Ok(Self {
            dim,
            num_low,
            seed,
            matrix,
        })
    }

    /// Row-major `d x n`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn column(&self, low: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.matrix[r * self.num_low + low]).collect()
    }
}

impl SemanticEncoder for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.num_low {
            return Err(Error::Dimension(format!(
                "histogram has {} bins, projection expects {}",
                q.len(),
                self.num_low
            )));
        }
        Ok((0..self.dim)
            .map(|r| {
                self.matrix[r * self.num_low..(r + 1) * self.num_low]
                    .iter()
                    .zip(q)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

/// Per-axis min-max scaling fitted on training nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionScaler {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PositionScaler {
    pub fn fit(graphs: &[&SceneGraph]) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for g in graphs {
            for node in g.nodes.iter().filter(|n| n.split == Split::Train) {
                any = true;
                for a in 0..3 {
                    min[a] = min[a].min(node.position[a]);
                    max[a] = max[a].max(node.position[a]);
                }
            }
        }
        if !any {
            return Err(Error::Graph("cannot fit positions: no training nodes".into()));
        }
        Ok(Self { min, max })
    }

    /// Maps into `[0, 1]` per axis (clamped); degenerate axes map to 0.
    pub fn scale(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let span = self.max[a] - self.min[a];
            out[a] = if span > 0.0 {
                ((p[a] - self.min[a]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }
}

/// Position scaler plus random-projection semantics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "EncoderSpec", try_from = "EncoderSpec")]
pub struct FeatureEncoder {
    pub positions: PositionScaler,
    pub semantics: RandomProjection,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSpec {
    embed_dim: usize,
    num_low: usize,
    seed: u64,
    positions: PositionScaler,
}

impl From<FeatureEncoder> for EncoderSpec {
    fn from(e: FeatureEncoder) -> Self {
        Self {
            embed_dim: e.semantics.dim,
            num_low: e.semantics.num_low,
            seed: e.semantics.seed,
            positions: e.positions,
        }
    }
}

impl TryFrom<EncoderSpec> for FeatureEncoder {
    type Error = Error;

    fn try_from(s: EncoderSpec) -> Result<Self> {
        Ok(Self {
            positions: s.positions,
            semantics: RandomProjection::new(s.embed_dim, s.num_low, s.seed)?,
        })
    }
}

impl FeatureEncoder {
    /// Fits position ranges on the training split of `graphs`.
    pub fn fit(graphs: &[&SceneGraph], embed_dim: usize, seed: u64) -> Result<Self> {
        let num_low = graphs
            .first()
            .map(|g| g.low_levels.len())
            .ok_or_else(|| Error::Graph("no graphs to fit an encoder on".into()))?;
        Ok(Self {
            positions: PositionScaler::fit(graphs)?,
            semantics: RandomProjection::new(embed_dim, num_low, seed)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        3 + self.semantics.dim
    }
}

/// `|V| x (3 + d)` feature matrix.
pub fn encode_features(graph: &SceneGraph, encoder: &FeatureEncoder) -> Result<Tensor> {
    encode_with(graph, &encoder.positions, &encoder.semantics)
}

/// Same as [`encode_features`] with any semantic encoder.
pub fn encode_with(graph: &SceneGraph, positions: &PositionScaler, semantics: &dyn SemanticEncoder) -> Result<Tensor> {
    let width = 3 + semantics.dim();
    let mut data = Vec::with_capacity(graph.nodes.len() * width);
    for (i, node) in graph.nodes.iter().enumerate() {
        data.extend_from_slice(&positions.scale(node.position));
        let emb = semantics
            .encode(&graph.normalized_histogram(i))
            .map_err(|e| Error::Dimension(format!("node {i}: {e}")))?;
        data.extend(emb);
    }
    Ok(Tensor::new(vec![graph.nodes.len(), width], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegraph::PlaceNode;

    fn graph(hists: Vec<Vec<u32>>) -> SceneGraph {
        SceneGraph {
            low_levels: (0..hists[0].len()).map(|i| format!("l{i}")).collect(),
            high_levels: vec!["h".into()],
            nodes: hists
                .into_iter()
                .enumerate()
                .map(|(i, h)| PlaceNode {
                    position: [i as f64, 2.0 * i as f64, 5.0],
                    histogram: h,
                    label: None,
                    split: Split::Train,
                })
                .collect(),
            edges: vec![],
        }
    }

    #[test]
    fn zero_and_proportional_histograms() {
        let g = graph(vec![vec![0, 0, 0], vec![1, 2, 0], vec![2, 4, 0]]);
        let enc = FeatureEncoder::fit(&[&g], 8, 3).unwrap();
        let x = encode_features(&g, &enc).unwrap();
        assert_eq!(x.shape(), &[3, 11]);
        let rows = x.to_rows();
        assert!(rows[0][3..].iter().all(|&v| v == 0.0));
        assert_eq!(rows[1][3..], rows[2][3..]);
        // positions scaled per axis, degenerate z maps to 0
        assert_eq!(&rows[0][..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&rows[2][..3], &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn basis_vector_selects_column() {
        let p = RandomProjection::new(6, 4, 11).unwrap();
        let e1 = p.encode(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e1, p.column(0));
        let s = 1.0 / 6f64.sqrt();
        assert!(p.matrix().iter().all(|&v| v == s || v == -s));
        assert!(p.encode(&[1.0]).is_err());
    }

    #[test]
    fn encoder_serializes_by_seed() {
        let g = graph(vec![vec![1, 0], vec![0, 1]]);
        let enc = FeatureEncoder::fit(&[&g], 4, 9).unwrap();
        let text = serde_json::to_string(&enc).unwrap();
        let back: FeatureEncoder = serde_json::from_str(&text).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn fit_needs_training_nodes() {
        let mut g = graph(vec![vec![1]]);
        g.nodes[0].split = Split::Test;
        assert!(FeatureEncoder::fit(&[&g], 4, 0).is_err());
    }
}
