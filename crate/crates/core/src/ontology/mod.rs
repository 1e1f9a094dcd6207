//! Spatial ontologies: a bipartite graph between low-level concepts (objects,
//! surfaces) and the high-level concepts (rooms, regions) that contain them.

mod chat;
mod completion;
mod evaluate;
mod io;
mod prompts;
mod scoring;

use std::collections::HashSet;

pub use chat::{
    BackendError, ChatClient, HttpChatClient, HttpChatConfig, PlantedChat, ScriptedChat, API_KEY_ENV, ENDPOINT_ENV,
};
pub use completion::{build_by_completion, parse_concept_list, CompletionConfig};
pub use evaluate::{evaluate_against_reference, load_judgments, Judgment, OntologyMetrics, RelationLabel};
pub use io::{load, save};
pub use prompts::{python_list, PromptTemplates};
pub use scoring::{build_by_scoring, edge_weights, retained_prefix, LmScorer, ScoringConfig, TableScorer};

use crate::error::{Error, Result};

/// Region label that never enters the high-level vocabulary.
pub const UNKNOWN_LABEL: &str = "unknown";

/// Low-level vocabulary `L` (n concepts), high-level vocabulary `H`
/// (m concepts) and the m x n binary biadjacency matrix between them.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialOntology {
    low_levels: Vec<String>,
    high_levels: Vec<String>,
    omega: Vec<f64>,
}

fn check_unique(list: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for s in list {
        if !seen.insert(s.as_str()) {
            return Err(Error::Ontology(format!("duplicate {what} concept {s:?}")));
        }
    }
    Ok(())
}

impl SpatialOntology {
    /// An ontology with no edges.
    pub fn new(low_levels: Vec<String>, high_levels: Vec<String>) -> Result<Self> {
        check_unique(&low_levels, "low-level")?;
        check_unique(&high_levels, "high-level")?;
        let omega = vec![0.0; low_levels.len() * high_levels.len()];
        Ok(Self {
            low_levels,
            high_levels,
            omega,
        })
    }

    /// Builds an ontology from `(high, low)` index pairs.
    pub fn with_edges(low_levels: Vec<String>, high_levels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut onto = Self::new(low_levels, high_levels)?;
        for &(h, l) in edges {
            onto.set_edge(h, l, true)?;
        }
        Ok(onto)
    }

    /// Builds an ontology from a dense m x n 0/1 matrix.
    pub fn from_matrix(low_levels: Vec<String>, high_levels: Vec<String>, omega: &[Vec<f64>]) -> Result<Self> {
        let mut onto = Self::new(low_levels, high_levels)?;
        if omega.len() != onto.num_high() {
            return Err(Error::Ontology(format!(
                "omega has {} rows but there are {} high-level concepts",
                omega.len(),
                onto.num_high()
            )));
        }
        for (h, row) in omega.iter().enumerate() {
            if row.len() != onto.num_low() {
                return Err(Error::Ontology(format!(
                    "omega row {h} has {} entries but there are {} low-level concepts",
                    row.len(),
                    onto.num_low()
                )));
            }
            for (l, &v) in row.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Ontology(format!("omega[{h}][{l}] = {v} is not binary")));
                }
                onto.set_edge(h, l, v == 1.0)?;
            }
        }
        Ok(onto)
    }

    pub fn low_levels(&self) -> &[String] {
        &self.low_levels
    }

    pub fn high_levels(&self) -> &[String] {
        &self.high_levels
    }

    /// n
    pub fn num_low(&self) -> usize {
        self.low_levels.len()
    }

    /// m
    pub fn num_high(&self) -> usize {
        self.high_levels.len()
    }

    pub fn low_index(&self, concept: &str) -> Option<usize> {
        self.low_levels.iter().position(|c| c == concept)
    }

    pub fn high_index(&self, concept: &str) -> Option<usize> {
        self.high_levels.iter().position(|c| c == concept)
    }

    pub fn has_edge(&self, high: usize, low: usize) -> bool {
        self.omega[high * self.num_low() + low] != 0.0
    }

    pub fn set_edge(&mut self, high: usize, low: usize, present: bool) -> Result<()> {
        if high >= self.num_high() || low >= self.num_low() {
            return Err(Error::Ontology(format!(
                "edge ({high}, {low}) outside {}x{} biadjacency",
                self.num_high(),
                self.num_low()
            )));
        }
        let n = self.num_low();
        self.omega[high * n + low] = if present { 1.0 } else { 0.0 };
        Ok(())
    }

    /// Row-major m x n biadjacency.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// `(high, low)` pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_low();
        (0..self.omega.len())
            .filter(|&k| self.omega[k] != 0.0)
            .map(|k| (k / n, k % n))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.omega.iter().filter(|&&v| v != 0.0).count()
    }

    /// Low-level concepts linked to high-level concept `high`.
    pub fn lows_of(&self, high: usize) -> Vec<usize> {
        (0..self.num_low()).filter(|&l| self.has_edge(high, l)).collect()
    }

    /// Omega with every nonzero column scaled to unit l1 norm; all-zero
    /// columns (disconnected low-level concepts) stay zero.
    pub fn normalized_biadjacency(&self) -> Vec<f64> {
        let (m, n) = (self.num_high(), self.num_low());
        let mut out = self.omega.clone();
        for l in 0..n {
            let norm: f64 = (0..m).map(|h| self.omega[h * n + l].abs()).sum();
            if norm > 0.0 {
                for h in 0..m {
                    out[h * n + l] /= norm;
                }
            }
        }
        out
    }
}

/// Drops the `unknown` region label from a high-level vocabulary.
pub fn without_unknown(high_levels: &[String]) -> Vec<String> {
    high_levels
        .iter()
        .filter(|h| !h.trim().eq_ignore_ascii_case(UNKNOWN_LABEL))
        .cloned()
        .collect()
}

pub(crate) fn check_vocabularies(low: &[String], high: &[String]) -> Result<()> {
    if low.is_empty() || high.is_empty() {
        return Err(Error::Ontology("vocabularies must be nonempty".into()));
    }
    check_unique(low, "low-level")?;
    check_unique(high, "high-level")
}
