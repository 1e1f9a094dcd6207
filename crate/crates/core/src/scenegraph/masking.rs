//! Label masking for sparse-label and zero-shot experiments.

use std::collections::BTreeSet;

use diffcore::rng::stream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{SceneGraph, Split};
use crate::error::{Error, Result};

const MASK_STREAM: u64 = 0x4d41_534b;

/// Removes the labels of all but a seeded uniform sample of
/// `keep_fraction` of the labeled training nodes. Validation and test labels
/// are untouched. When `keep_fraction > 0` at least one label survives
/// (the kept count is rounded up).
///
/// The same seed always ranks the training labels identically, so kept sets
/// for smaller fractions are subsets of those for larger ones.
pub fn mask_labels(graph: &SceneGraph, keep_fraction: f64, seed: u64) -> Result<SceneGraph> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::Config(format!(
            "keep_fraction must lie in [0, 1], got {keep_fraction}"
        )));
    }
    let mut labeled: Vec<usize> = graph.labeled(Split::Train).into_iter().map(|(i, _)| i).collect();
    let total = labeled.len();
    let keep = if keep_fraction >= 1.0 {
        total
    } else if keep_fraction <= 0.0 {
        0
    } else {
        // tolerate representation error such as 1000 * 0.001 = 1.0000000000000002
        let exact = keep_fraction * total as f64;
        ((exact - 1e-9).ceil() as usize).max(1).min(total)
    };
    labeled.shuffle(&mut stream(seed, MASK_STREAM));
    let mut out = graph.clone();
    for &i in &labeled[keep..] {
        out.nodes[i].label = None;
    }
    Ok(out)
}

/// Which splits lose the labels of masked classes. `TrainAndVal` also keeps
/// masked classes out of validation-based model selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    #[default]
    TrainOnly,
    TrainAndVal,
}

/// Drops the labels of `classes` from training nodes (and validation nodes
/// under [`MaskScope::TrainAndVal`]). Test labels are never touched.
pub fn mask_classes(graph: &SceneGraph, classes: &[usize], scope: MaskScope) -> Result<SceneGraph> {
    let m = graph.num_classes();
    let masked: BTreeSet<usize> = classes.iter().copied().collect();
    if let Some(&bad) = masked.iter().find(|&&c| c >= m) {
        return Err(Error::Config(format!(
            "masked class {bad} out of range for {m} classes"
        )));
    }
    if !masked.is_empty() && masked.len() == m {
        return Err(Error::Config("cannot mask every class".into()));
    }
    let mut out = graph.clone();
    for node in &mut out.nodes {
        let in_scope = match scope {
            MaskScope::TrainOnly => node.split == Split::Train,
            MaskScope::TrainAndVal => node.split != Split::Test,
        };
        if in_scope && node.label.is_some_and(|l| masked.contains(&l)) {
            node.label = None;
        }
    }
    Ok(out)
}
