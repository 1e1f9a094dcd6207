//! Full-graph training with Adam, validation-based model selection and a
//! loss-plateau stopping rule.

use std::path::Path;
use std::time::Instant;

use diffcore::rng::derive_seed;
use diffcore::{AdamConfig, AdamState, Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::evaluate::{argmax, Predictor};
use super::loss::{compute_loss, LossKind, Supervision};
use super::predicates::{check_alignment, OntologyTargets};
use crate::error::{Error, Result};
use crate::fuzzy::AggregatorConfig;
use crate::jsonio::{read_json, write_json};
use crate::model::checkpoint::Checkpoint;
use crate::model::{ClassifierConfig, GraphInput, RegionClassifier};
use crate::ontology::SpatialOntology;
use crate::scenegraph::{encode_features, mask_classes, mask_labels, FeatureEncoder, MaskScope, SceneGraph, Split};

const MASK_STREAM: u64 = 1;
const ENCODER_STREAM: u64 = 2;
const MODEL_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;

/// Nodes the inclusion axiom quantifies over during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionScope {
    #[default]
    TrainVal,
    /// Transductive: test nodes too.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub convergence_delta: f64,
    pub convergence_patience: usize,
    /// Seeds masking, encoder, initialization and dropout.
    pub seed: u64,
    /// Fraction of labeled training nodes whose labels are kept.
    pub keep_fraction: f64,
    /// High-level concepts whose labels are hidden during training.
    pub masked_classes: Vec<String>,
    pub mask_scope: MaskScope,
    pub inclusion_scope: InclusionScope,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub dropout: f64,
    pub negative_slope: f64,
    pub aggregator: AggregatorConfig,
    /// Wall-clock measurements make outputs non-reproducible; off by default.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ClassifierConfig::new(1, 1);
        Self {
            loss_kind: LossKind::SatBoth,
            learning_rate: 1e-3,
            weight_decay: 5e-5,
            max_epochs: 1000,
            convergence_delta: 1e-6,
            convergence_patience: 10,
            seed: 1,
            keep_fraction: 1.0,
            masked_classes: Vec::new(),
            mask_scope: MaskScope::default(),
            inclusion_scope: InclusionScope::default(),
            embed_dim: 32,
            hidden_dim: model.hidden_dim,
            heads: model.heads,
            gat_layers: model.gat_layers,
            dropout: model.dropout,
            negative_slope: model.negative_slope,
            aggregator: AggregatorConfig::default(),
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if self.max_epochs == 0 || self.convergence_patience == 0 {
            return Err(Error::Config(
                "max_epochs and convergence_patience must be at least 1".into(),
            ));
        }
        if !(self.convergence_delta >= 0.0) {
            return Err(Error::Config("convergence_delta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return Err(Error::Config(format!(
                "keep_fraction must lie in [0, 1], got {}",
                self.keep_fraction
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        self.aggregator.validate()?;
        self.classifier_config(1, 1).validate()
    }

    pub fn classifier_config(&self, input_dim: usize, num_classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_dim,
            num_classes,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            gat_layers: self.gat_layers,
            dropout: self.dropout,
            negative_slope: self.negative_slope,
        }
    }

    /// Indices of `masked_classes` in the ontology's high-level vocabulary.
    pub fn masked_indices(&self, ontology: &SpatialOntology) -> Result<Vec<usize>> {
        self.masked_classes
            .iter()
            .map(|c| ontology.high_index(c).ok_or_else(|| Error::UnknownConcept(c.clone())))
            .collect()
    }
}

/// Trained classifier with everything needed to classify new graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub low_levels: Vec<String>,
    pub high_levels: Vec<String>,
    pub encoder: FeatureEncoder,
    pub classifier: RegionClassifier,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    low_levels: Vec<String>,
    high_levels: Vec<String>,
    encoder: FeatureEncoder,
    classifier: Checkpoint,
}

const MODEL_FORMAT: &str = "ontoplace-model";

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &ModelFile {
                format: MODEL_FORMAT.into(),
                version: 1,
                low_levels: self.low_levels.clone(),
                high_levels: self.high_levels.clone(),
                encoder: self.encoder.clone(),
                classifier: Checkpoint::from(&self.classifier),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        if file.format != MODEL_FORMAT || file.version != 1 {
            return Err(Error::Config(format!(
                "{}: unsupported model file {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        let classifier = RegionClassifier::try_from(file.classifier)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = classifier.config();
        if cfg.input_dim != file.encoder.output_dim() || cfg.num_classes != file.high_levels.len() {
            return Err(Error::Config(format!(
                "{}: classifier dimensions do not match encoder and vocabulary",
                path.display()
            )));
        }
        Ok(Self {
            low_levels: file.low_levels,
            high_levels: file.high_levels,
            encoder: file.encoder,
            classifier,
        })
    }
}

impl Predictor for TrainedModel {
    fn predict_probs(&self, graph: &SceneGraph) -> Result<Tensor> {
        if graph.low_levels != self.low_levels || graph.high_levels != self.high_levels {
            return Err(Error::Ontology(
                "scene graph vocabularies differ from the trained model's".into(),
            ));
        }
        let x = encode_features(graph, &self.encoder)?;
        let input = GraphInput::new(graph.num_nodes(), &graph.edges)?;
        self.classifier.predict(&x, &input)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Mean equivalence-axiom satisfaction over graphs where it was active.
    pub equiv_sat: Option<f64>,
    pub incl_sat: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// True when the plateau rule fired before `max_epochs`.
    pub converged: bool,
    pub train_seconds: Option<f64>,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: History,
    /// Indices of the masked high-level concepts.
    pub masked_classes: Vec<usize>,
}

struct GraphData {
    features: Tensor,
    input: GraphInput,
    supervision: Supervision,
    val: Vec<(usize, usize)>,
}

/// Applies class masking and then label subsampling to each graph. Masking
/// seeds depend only on `seed` and the graph index, so runs that differ only
/// in loss kind see the same labels.
pub fn apply_masking(graphs: &[SceneGraph], masked: &[usize], config: &TrainConfig) -> Result<Vec<SceneGraph>> {
    graphs
        .iter()
        .enumerate()
        .map(|(g, graph)| {
            let graph = if masked.is_empty() {
                graph.clone()
            } else {
                mask_classes(graph, masked, config.mask_scope)?
            };
            let seed = derive_seed(derive_seed(config.seed, MASK_STREAM), g as u64);
            mask_labels(&graph, config.keep_fraction, seed)
        })
        .collect()
}

fn accuracy_on(model: &RegionClassifier, data: &[GraphData]) -> Result<Option<f64>> {
    let (mut correct, mut total) = (0usize, 0usize);
    for d in data.iter().filter(|d| !d.val.is_empty()) {
        let probs = model.predict(&d.features, &d.input)?;
        for &(v, label) in &d.val {
            correct += usize::from(argmax(probs.row(v)) == label);
            total += 1;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains one model on `graphs` (all sharing the ontology's vocabularies).
///
/// Each epoch takes one Adam step per graph. After every epoch the
/// validation accuracy is measured in eval mode and the best parameters are
/// kept (earliest wins ties). Training stops after `max_epochs`, or once the
/// epoch loss has changed by less than `convergence_delta` for
/// `convergence_patience` consecutive epochs; the first comparison is
/// against the loss of the initial parameters.
pub fn train(graphs: &[SceneGraph], ontology: &SpatialOntology, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(Error::Graph("no training graphs".into()));
    }
    for g in graphs {
        check_alignment(g, ontology)?;
        if g.split_nodes(Split::Train).is_empty() {
            return Err(Error::Graph("a training graph has no training nodes".into()));
        }
    }
    let started = Instant::now();
    let masked = config.masked_indices(ontology)?;
    let masked_graphs = apply_masking(graphs, &masked, config)?;
    let refs: Vec<&SceneGraph> = masked_graphs.iter().collect();
    let encoder = FeatureEncoder::fit(&refs, config.embed_dim, derive_seed(config.seed, ENCODER_STREAM))?;
    let m = ontology.num_high();

    let mut data = Vec::with_capacity(graphs.len());
    for g in &masked_graphs {
        let targets = OntologyTargets::new(g, ontology)?;
        let inclusion: Vec<usize> = (0..g.num_nodes())
            .filter(|&v| config.inclusion_scope == InclusionScope::All || g.nodes[v].split != Split::Test)
            .collect();
        data.push(GraphData {
            features: encode_features(g, &encoder)?,
            input: GraphInput::new(g.num_nodes(), &g.edges)?,
            supervision: Supervision::new(&g.labeled(Split::Train), m, &inclusion, &targets)?,
            val: g.labeled(Split::Val),
        });
    }

    let mut model = RegionClassifier::new(
        config.classifier_config(encoder.output_dim(), m),
        derive_seed(config.seed, MODEL_STREAM),
    )?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        model.params(),
    )?;
    let dropout_base = derive_seed(config.seed, DROPOUT_STREAM);

    // One pass over every graph; steps the optimizer when `update` is set.
    let mut pass = |model: &mut RegionClassifier, epoch: usize, update: bool| -> Result<EpochRecord> {
        let (mut losses, mut equiv, mut incl) = (Vec::new(), Vec::new(), Vec::new());
        for (g, d) in data.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let x = tape.constant(d.features.clone());
            let seed = derive_seed(dropout_base, (epoch * data.len() + g) as u64);
            let out = model.forward(&mut tape, &vars, x, &d.input, true, seed)?;
            let loss = compute_loss(
                &mut tape,
                config.loss_kind,
                out.probs,
                &d.supervision,
                &config.aggregator,
            )
            .map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
            let value = tape.value(loss.loss).item();
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {value} on graph {g}"),
                });
            }
            losses.push(value);
            equiv.extend(loss.equiv);
            incl.extend(loss.incl);
            if update {
                tape.backward(loss.loss)?;
                let grads: Vec<Vec<f64>> = vars
                    .iter()
                    .zip(model.params())
                    .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
                    .collect();
                adam.step(model.params_mut(), &grads)?;
            }
        }
        Ok(EpochRecord {
            epoch,
            loss: mean_of(&losses).expect("at least one graph"),
            equiv_sat: mean_of(&equiv),
            incl_sat: mean_of(&incl),
            val_accuracy: None,
        })
    };

    let mut previous = pass(&mut model, 0, false)?.loss;
    let mut best_val = accuracy_on(&model, &data)?;
    let mut best_params = model.params().to_vec();
    let mut best_epoch = 0;
    let mut stable = 0;
    let mut epochs = Vec::new();
    let mut converged = false;
    for epoch in 1..=config.max_epochs {
        let mut record = pass(&mut model, epoch, true)?;
        if model.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Training {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
        record.val_accuracy = accuracy_on(&model, &data)?;
        match (record.val_accuracy, best_val) {
            (Some(acc), Some(best)) if acc <= best => {}
            (Some(acc), _) => {
                best_val = Some(acc);
                best_params = model.params().to_vec();
                best_epoch = epoch;
            }
            // without validation labels the latest parameters are kept
            (None, _) => {
                best_params = model.params().to_vec();
                best_epoch = epoch;
            }
        }
        stable = if (record.loss - previous).abs() < config.convergence_delta {
            stable + 1
        } else {
            0
        };
        previous = record.loss;
        epochs.push(record);
        if stable >= config.convergence_patience {
            converged = true;
            break;
        }
    }

    let classifier = RegionClassifier::from_params(*model.config(), best_params)?;
    Ok(TrainOutcome {
        model: TrainedModel {
            low_levels: ontology.low_levels().to_vec(),
            high_levels: ontology.high_levels().to_vec(),
            encoder,
            classifier,
        },
        history: History {
            epochs,
            best_epoch,
            best_val_accuracy: best_val,
            converged,
            train_seconds: config.record_timing.then(|| started.elapsed().as_secs_f64()),
        },
        masked_classes: masked,
    })
}
