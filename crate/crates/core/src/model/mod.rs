//! Region classifier: stacked graph-attention layers followed by a two-layer
//! MLP and a row softmax.
//!
//! Undirected place edges are expanded to both directions and every node gets
//! a self-loop, so attention normalizes over each node's neighborhood plus
//! itself. Heads are concatenated in every layer, including the last one.

pub(crate) mod checkpoint;

use std::sync::Arc;

use diffcore::rng::{derive_seed, stream};
use diffcore::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::gat_layers")]
    pub gat_layers: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::negative_slope")]
    pub negative_slope: f64,
}

mod defaults {
    pub fn hidden_dim() -> usize {
        32
    }
    pub fn heads() -> usize {
        4
    }
    pub fn gat_layers() -> usize {
        3
    }
    pub fn dropout() -> f64 {
        0.25
    }
    pub fn negative_slope() -> f64 {
        0.2
    }
}

impl ClassifierConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            hidden_dim: defaults::hidden_dim(),
            heads: defaults::heads(),
            gat_layers: defaults::gat_layers(),
            dropout: defaults::dropout(),
            negative_slope: defaults::negative_slope(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.gat_layers == 0 {
            return Err(Error::Config(
                "input_dim, num_classes and gat_layers must be positive".into(),
            ));
        }
        if self.heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.negative_slope.is_finite() && self.negative_slope >= 0.0) {
            return Err(Error::Config("negative_slope must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Shapes of every parameter, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f, hid) = (self.heads, self.head_dim(), self.hidden_dim);
        let mut shapes = Vec::new();
        for l in 0..self.gat_layers {
            let input = if l == 0 { self.input_dim } else { hid };
            shapes.push((format!("gat{l}.weight"), vec![input, hid]));
            shapes.push((format!("gat{l}.att_src"), vec![h, f]));
            shapes.push((format!("gat{l}.att_dst"), vec![h, f]));
            shapes.push((format!("gat{l}.bias"), vec![hid]));
        }
        shapes.push(("mlp.w1".into(), vec![hid, hid]));
        shapes.push(("mlp.b1".into(), vec![hid]));
        shapes.push(("mlp.w2".into(), vec![hid, self.num_classes]));
        shapes.push(("mlp.b2".into(), vec![self.num_classes]));
        shapes
    }
}

/// Directed message-passing structure: both directions of every undirected
/// edge plus one self-loop per node.
#[derive(Clone, Debug)]
pub struct GraphInput {
    num_nodes: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

impl GraphInput {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut src = Vec::with_capacity(2 * edges.len() + num_nodes);
        let mut dst = Vec::with_capacity(src.capacity());
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge {k} ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                continue;
            }
            src.extend([u, v]);
            dst.extend([v, u]);
        }
        src.extend(0..num_nodes);
        dst.extend(0..num_nodes);
        Ok(Self {
            num_nodes,
            src: src.into(),
            dst: dst.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Directed edges including self-loops.
    pub fn num_arcs(&self) -> usize {
        self.src.len()
    }

    pub fn sources(&self) -> &[usize] {
        &self.src
    }

    pub fn targets(&self) -> &[usize] {
        &self.dst
    }
}

/// Output of a forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `|V| x m` class distribution.
    pub probs: Var,
    /// Per GAT layer, `arcs x heads` attention coefficients.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionClassifier {
    config: ClassifierConfig,
    params: Vec<Tensor>,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

impl RegionClassifier {
    /// Glorot-uniform weights and attention vectors, zero biases.
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0x4741_5449);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else if name.contains("att_") {
                    // fans of an attention vector: one input per head block
                    glorot(&shape, shape[1], 1, &mut rng)
                } else {
                    glorot(&shape, shape[0], shape[1], &mut rng)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: ClassifierConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
            p.validate().map_err(|e| Error::Dimension(format!("{name}: {e}")))?;
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records the forward pass. Dropout uses a per-layer stream derived
    /// from `seed` and is inactive unless `training`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        features: Var,
        graph: &GraphInput,
        training: bool,
        seed: u64,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let (rows, cols) = tape.value(features).dims2()?;
        if cols != cfg.input_dim {
            return Err(Error::Dimension(format!(
                "features have {cols} columns, model expects {}",
                cfg.input_dim
            )));
        }
        if rows != graph.num_nodes {
            return Err(Error::Dimension(format!(
                "features have {rows} rows for a graph of {} nodes",
                graph.num_nodes
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::Dimension("parameter list does not match model".into()));
        }

        let n = graph.num_nodes;
        let mut h = features;
        let mut attention = Vec::with_capacity(cfg.gat_layers);
        for l in 0..cfg.gat_layers {
            let [w, a_src, a_dst, bias] = [0, 1, 2, 3].map(|k| params[4 * l + k]);
            let z = tape.matmul(h, w)?;
            let s_src = tape.head_dot(z, a_src)?;
            let s_dst = tape.head_dot(z, a_dst)?;
            let e_src = tape.gather_rows(s_src, graph.src.clone())?;
            let e_dst = tape.gather_rows(s_dst, graph.dst.clone())?;
            let e = tape.add(e_src, e_dst)?;
            let e = tape.leaky_relu(e, cfg.negative_slope)?;
            let alpha = tape.segment_softmax(e, graph.dst.clone(), n)?;
            attention.push(alpha);
            let agg = tape.propagate(z, alpha, graph.src.clone(), graph.dst.clone(), n)?;
            h = tape.add_bias(agg, bias)?;
            if l + 1 < cfg.gat_layers {
                h = tape.relu_dropout(h, cfg.dropout, training, derive_seed(seed, l as u64))?;
            }
        }
        let base = 4 * cfg.gat_layers;
        let z = tape.matmul(h, params[base])?;
        let z = tape.add_bias(z, params[base + 1])?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, params[base + 2])?;
        let logits = tape.add_bias(z, params[base + 3])?;
        let probs = tape.softmax_rows(logits)?;
        Ok(Forward { probs, attention })
    }

    /// Eval-mode class distributions, `|V| x m`.
    pub fn predict(&self, features: &Tensor, graph: &GraphInput) -> Result<Tensor> {
        Ok(self.predict_with_attention(features, graph)?.0)
    }

    /// Eval-mode distributions plus per-layer attention coefficients.
    pub fn predict_with_attention(&self, features: &Tensor, graph: &GraphInput) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(features.clone());
        let out = self.forward(&mut tape, &params, x, graph, false, 0)?;
        let attention = out.attention.iter().map(|&a| tape.value(a).clone()).collect();
        Ok((tape.value(out.probs).clone(), attention))
    }
}
