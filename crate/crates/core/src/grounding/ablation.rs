//! Sparse-label and zero-shot ablations: every (loss kind, keep fraction)
//! cell is trained for trials with seeds `1..=T`, sharing masking seeds
//! across loss kinds so comparisons are paired.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate_many;
use super::loss::LossKind;
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::ontology::SpatialOntology;
use crate::scenegraph::{SceneGraph, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Shared settings; `loss_kind`, `keep_fraction` and `seed` are
    /// overridden per run.
    #[serde(default)]
    pub train: TrainConfig,
    pub loss_kinds: Vec<LossKind>,
    pub keep_fractions: Vec<f64>,
    pub trials: usize,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_kinds.is_empty() || self.keep_fractions.is_empty() || self.trials == 0 {
            return Err(Error::Config(
                "ablation needs loss kinds, keep fractions and at least one trial".into(),
            ));
        }
        for &f in &self.keep_fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("keep fraction {f} outside [0, 1]")));
            }
        }
        self.train.validate()
    }
}

/// One trained and evaluated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub loss_kind: LossKind,
    pub keep_fraction: f64,
    pub trial: usize,
    pub seed: u64,
    /// Test-split accuracy pooled over graphs.
    pub accuracy: Option<f64>,
    pub masked_class_accuracy: Option<f64>,
    pub epochs: Option<usize>,
    pub train_seconds: Option<f64>,
    pub infer_seconds_per_graph: Option<f64>,
    /// Why the trial aborted, if it did.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub loss_kind: LossKind,
    pub keep_fraction: f64,
    pub trials: usize,
    pub completed: usize,
    /// False when any trial aborted.
    pub complete: bool,
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation; 0 for a single trial.
    pub std_accuracy: Option<f64>,
    pub min_accuracy: Option<f64>,
    pub max_accuracy: Option<f64>,
    pub mean_masked_class_accuracy: Option<f64>,
    pub std_masked_class_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<CellSummary>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

fn run_one(
    graphs: &[SceneGraph],
    ontology: &SpatialOntology,
    base: &TrainConfig,
    kind: LossKind,
    fraction: f64,
    trial: usize,
) -> AblationRow {
    let config = TrainConfig {
        loss_kind: kind,
        keep_fraction: fraction,
        seed: trial as u64,
        ..base.clone()
    };
    let mut row = AblationRow {
        loss_kind: kind,
        keep_fraction: fraction,
        trial,
        seed: config.seed,
        accuracy: None,
        masked_class_accuracy: None,
        epochs: None,
        train_seconds: None,
        infer_seconds_per_graph: None,
        error: None,
    };
    let result = train(graphs, ontology, &config).and_then(|outcome| {
        let metrics = evaluate_many(
            &outcome.model,
            graphs,
            Split::Test,
            &outcome.masked_classes,
            config.record_timing,
        )?;
        Ok((outcome, metrics))
    });
    match result {
        Ok((outcome, metrics)) => {
            row.accuracy = Some(metrics.accuracy);
            row.masked_class_accuracy = metrics.masked_class_accuracy;
            row.epochs = Some(outcome.history.epochs_run());
            row.train_seconds = outcome.history.train_seconds;
            row.infer_seconds_per_graph = metrics.inference_seconds_per_graph;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every cell on `jobs` worker threads. Rows come back ordered by loss
/// kind, keep fraction (both in configuration order) and trial, whatever
/// order the trials finished in. Accuracy is measured on the test split.
pub fn run_ablation(
    graphs: &[SceneGraph],
    ontology: &SpatialOntology,
    config: &AblationConfig,
    jobs: usize,
) -> Result<AblationReport> {
    config.validate()?;
    let tasks: Vec<(LossKind, f64, usize)> = config
        .loss_kinds
        .iter()
        .flat_map(|&k| {
            config
                .keep_fractions
                .iter()
                .flat_map(move |&f| (1..=config.trials).map(move |t| (k, f, t)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<AblationRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, f, t)| run_one(graphs, ontology, &config.train, k, f, t))
            .collect()
    });

    let cells = rows
        .chunks(config.trials)
        .map(|chunk| {
            let acc: Vec<f64> = chunk.iter().filter_map(|r| r.accuracy).collect();
            let masked: Vec<f64> = chunk.iter().filter_map(|r| r.masked_class_accuracy).collect();
            let (mean, std) = mean_std(&acc).unzip();
            let (mmean, mstd) = mean_std(&masked).unzip();
            CellSummary {
                loss_kind: chunk[0].loss_kind,
                keep_fraction: chunk[0].keep_fraction,
                trials: chunk.len(),
                completed: acc.len(),
                complete: acc.len() == chunk.len(),
                mean_accuracy: mean,
                std_accuracy: std,
                min_accuracy: acc.iter().copied().reduce(f64::min),
                max_accuracy: acc.iter().copied().reduce(f64::max),
                mean_masked_class_accuracy: mmean,
                std_masked_class_accuracy: mstd,
            }
        })
        .collect();
    Ok(AblationReport { rows, cells })
}
