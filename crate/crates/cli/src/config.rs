//! Run configuration: one JSON document shared by every subcommand, with
//! command-line flags applied on top before it is parsed.

use std::path::{Path, PathBuf};

use ontoplace::grounding::{LossKind, TrainConfig};
use ontoplace::ontology::{CompletionConfig, PromptTemplates, ScoringConfig};
use ontoplace::scenegraph::Split;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `{"low_levels": [...], "high_levels": [...]}` for ontology builders.
    pub vocabulary: Option<PathBuf>,
    /// Ontology the mock language-model backends answer from.
    pub planted: Option<PathBuf>,
    /// Precomputed sentence scores (`{"<sentence>": log_prob}`).
    pub scores: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    /// `synth` also writes the planted ontology here.
    pub ontology_out: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub graphs: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    /// Output file, or output directory for `train` and `ablate`.
    pub out: Option<PathBuf>,
    pub templates: PromptTemplates,
    pub scoring: Option<ScoringConfig>,
    pub completion: Option<CompletionConfig>,
    pub chat: ChatSettings,
    pub synth: SynthSettings,
    pub train: TrainConfig,
    pub ablation: AblationSettings,
    pub evaluation: EvaluationSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatSettings {
    pub model: String,
    /// Reply cache for the live client; reruns replay cached replies.
    pub cache_dir: Option<PathBuf>,
    /// Mock backend only.
    pub hallucination_rate: f64,
    /// Mock backend only.
    pub seed: u64,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            cache_dir: None,
            hallucination_rate: 0.0,
            seed: 0,
        }
    }
}

/// Planted-ontology shape used when `synth` is not given an ontology file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSettings {
    pub num_high: usize,
    pub num_low: usize,
    pub edges_per_high: usize,
    pub seed: u64,
}

impl Default for PlantedSettings {
    fn default() -> Self {
        Self {
            num_high: 6,
            num_low: 20,
            edges_per_high: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub planted: PlantedSettings,
    pub num_nodes: usize,
    pub num_regions_per_class: usize,
    pub knn_k: usize,
    pub histogram_draws: usize,
    pub noise_rate: f64,
    pub region_spread: f64,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            planted: PlantedSettings::default(),
            num_nodes: 2000,
            num_regions_per_class: 4,
            knn_k: 5,
            histogram_draws: 20,
            noise_rate: 0.2,
            region_spread: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub loss_kinds: Vec<LossKind>,
    pub keep_fractions: Vec<f64>,
    pub trials: usize,
    pub jobs: usize,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            loss_kinds: LossKind::ALL.to_vec(),
            keep_fractions: vec![1.0, 0.1, 0.01, 0.001],
            trials: 10,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub split: EvalSplit,
    /// Classes reported separately as masked.
    pub masked_classes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Val,
    #[default]
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Self {
        match s {
            EvalSplit::Train => Split::Train,
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }
}

/// A `dotted.key = value` assignment applied to the raw JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

impl Override {
    pub fn new(key: &str, value: impl Into<Value>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }

    /// Parses `key=value`; the value is read as JSON, falling back to a
    /// plain string.
    pub fn parse(text: &str) -> CliResult<Self> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {text:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        Ok(Self::new(key.trim(), value))
    }
}

fn apply(root: &mut Value, ov: &Override) -> CliResult<()> {
    let mut node = root;
    let parts: Vec<&str> = ov.key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("malformed override key {:?}", ov.key)));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {:?} descends into a non-object", ov.key)))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), ov.value.clone());
            return Ok(());
        }
        let child = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if child.is_null() {
            *child = Value::Object(Map::new());
        }
        node = child;
    }
    Ok(())
}

/// Reads `path` (or starts from defaults), applies `overrides` in order and
/// parses the result, rejecting unknown keys.
pub fn resolve(path: Option<&Path>, overrides: &[Override]) -> CliResult<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for ov in overrides {
        apply(&mut root, ov)?;
    }
    let config: RunConfig = serde_json::from_value(root).map_err(|e| {
        let origin = path.map_or_else(|| "config".to_string(), |p| p.display().to_string());
        CliError::Config(format!("{origin}: {e}"))
    })?;
    config.train.validate()?;
    Ok(config)
}

/// The required path field `name`.
pub fn required<'a>(value: &'a Option<PathBuf>, name: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("missing required path {name:?}")))
}

/// Fails unless every path exists as a file.
pub fn check_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Config(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

/// Fails unless the directory that will hold `path` exists.
pub fn check_output_file(path: &Path) -> CliResult<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    match parent {
        Some(dir) if !dir.is_dir() => Err(CliError::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ if path.is_dir() => Err(CliError::Config(format!("output {} is a directory", path.display()))),
        _ => Ok(()),
    }
}

/// Where the resolved config of a run writing `out` is recorded.
pub fn config_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}
