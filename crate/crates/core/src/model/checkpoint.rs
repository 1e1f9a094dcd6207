//! JSON checkpoints: configuration plus named, shaped, flat parameter arrays.

use std::path::Path;

use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, RegionClassifier};
use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};

const FORMAT: &str = "ontoplace-classifier";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ClassifierConfig,
    pub params: Vec<ParamRecord>,
}

impl From<&RegionClassifier> for Checkpoint {
    fn from(m: &RegionClassifier) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: m.config,
            params: m
                .config
                .param_shapes()
                .into_iter()
                .zip(&m.params)
                .map(|((name, shape), t)| ParamRecord {
                    name,
                    shape,
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for RegionClassifier {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                c.format, c.version
            )));
        }
        let expected = c.config.param_shapes();
        if expected.len() != c.params.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} parameters, configuration needs {}",
                c.params.len(),
                expected.len()
            )));
        }
        let mut params = Vec::with_capacity(c.params.len());
        for ((name, shape), rec) in expected.into_iter().zip(c.params) {
            if rec.name != name || rec.shape != shape {
                return Err(Error::Dimension(format!(
                    "checkpoint parameter {} {:?} does not match {name} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            params.push(Tensor::new(rec.shape, rec.data).map_err(|e| Error::Dimension(format!("{name}: {e}")))?);
        }
        RegionClassifier::from_params(c.config, params)
    }
}

pub fn save_checkpoint(model: &RegionClassifier, path: &Path) -> Result<()> {
    write_json(path, &Checkpoint::from(model))
}

pub fn load_checkpoint(path: &Path) -> Result<RegionClassifier> {
    let c: Checkpoint = read_json(path)?;
    RegionClassifier::try_from(c).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
