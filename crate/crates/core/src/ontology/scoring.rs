//! Ontology construction by scoring template sentences with a language model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::prompts::PromptTemplates;
use super::{check_vocabularies, without_unknown, SpatialOntology};
use crate::error::{Error, Result};

/// Maps a text string to (approximately) its log-probability.
pub trait LmScorer {
    fn score(&self, text: &str) -> std::result::Result<f64, super::BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    /// Softmax temperature `K`; `f64::INFINITY` gives uniform weights.
    pub temperature: f64,
    /// Cumulative-weight threshold `gamma`.
    pub threshold: f64,
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Looks up precomputed scores by exact text.
#[derive(Clone, Debug, Default)]
pub struct TableScorer {
    scores: HashMap<String, f64>,
    fallback: Option<f64>,
}

impl TableScorer {
    pub fn new(scores: HashMap<String, f64>) -> Self {
        Self { scores, fallback: None }
    }

    /// Score returned for texts missing from the table.
    pub fn with_fallback(mut self, fallback: f64) -> Self {
        self.fallback = Some(fallback);
        self
    }

    /// Scores `hit` for every sentence backed by an edge of `planted` and
    /// `miss` otherwise.
    pub fn planted(planted: &SpatialOntology, templates: &PromptTemplates, hit: f64, miss: f64) -> Self {
        let mut scores = HashMap::new();
        for (l, low) in planted.low_levels().iter().enumerate() {
            for (h, high) in planted.high_levels().iter().enumerate() {
                let s = if planted.has_edge(h, l) { hit } else { miss };
                scores.insert(templates.render_score(low, high), s);
            }
        }
        Self::new(scores)
    }
}

impl LmScorer for TableScorer {
    fn score(&self, text: &str) -> std::result::Result<f64, super::BackendError> {
        self.scores
            .get(text)
            .copied()
            .or(self.fallback)
            .ok_or_else(|| super::BackendError(format!("no score for {text:?}")))
    }
}

/// Softmax-normalized edge weights `w[i][j]` for low-level concept `i` over
/// every high-level concept `j`.
pub fn edge_weights(
    scorer: &dyn LmScorer,
    low_levels: &[String],
    high_levels: &[String],
    config: &ScoringConfig,
    templates: &PromptTemplates,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    check_vocabularies(low_levels, high_levels)?;
    let mut weights = Vec::with_capacity(low_levels.len());
    for low in low_levels {
        let mut logits = Vec::with_capacity(high_levels.len());
        for high in high_levels {
            let prompt = templates.render_score(low, high);
            let s = scorer.score(&prompt).map_err(|e| Error::Backend {
                prompt: prompt.clone(),
                message: e.0,
            })?;
            if !s.is_finite() {
                return Err(Error::Backend {
                    prompt,
                    message: format!("non-finite score {s}"),
                });
            }
            logits.push(s / config.temperature);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        weights.push(exp.into_iter().map(|e| e / z).collect());
    }
    Ok(weights)
}

/// Indices of the retained edges: the shortest prefix of the weights sorted
/// in descending order whose sum exceeds `threshold`. Ties keep the lower
/// index first.
pub fn retained_prefix(weights: &[f64], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut cumulative = 0.0;
    let mut kept = Vec::new();
    for j in order {
        kept.push(j);
        cumulative += weights[j];
        if cumulative > threshold {
            break;
        }
    }
    kept
}

/// Builds an ontology from language-model scores of
/// `"<low> is often found in <high>"` sentences, pruning each low-level
/// concept's edges to the smallest high-weight prefix exceeding the threshold.
pub fn build_by_scoring(
    scorer: &dyn LmScorer,
    low_levels: &[String],
    high_levels: &[String],
    config: &ScoringConfig,
    templates: &PromptTemplates,
) -> Result<SpatialOntology> {
    let high_levels = without_unknown(high_levels);
    let weights = edge_weights(scorer, low_levels, &high_levels, config, templates)?;
    let mut onto = SpatialOntology::new(low_levels.to_vec(), high_levels)?;
    for (l, w) in weights.iter().enumerate() {
        for h in retained_prefix(w, config.threshold) {
            onto.set_edge(h, l, true)?;
        }
    }
    Ok(onto)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn equal_scores_prune_to_two_of_four() {
        let scorer = TableScorer::default().with_fallback(-3.0);
        let highs = strings(&["a", "b", "c", "d"]);
        let cfg = ScoringConfig {
            temperature: 1.0,
            threshold: 0.4,
        };
        let t = PromptTemplates::default();
        let w = edge_weights(&scorer, &strings(&["x"]), &highs, &cfg, &t).unwrap();
        assert!(w[0].iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let onto = build_by_scoring(&scorer, &strings(&["x"]), &highs, &cfg, &t).unwrap();
        assert_eq!(onto.edges(), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn scorer_failure_names_prompt() {
        let scorer = TableScorer::default();
        let cfg = ScoringConfig {
            temperature: 1.0,
            threshold: 0.5,
        };
        let err = build_by_scoring(
            &scorer,
            &strings(&["sink"]),
            &strings(&["kitchen"]),
            &cfg,
            &PromptTemplates::default(),
        )
        .unwrap_err();
        match err {
            Error::Backend { prompt, .. } => assert_eq!(prompt, "sink is often found in kitchen"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        for (k, g) in [(0.0, 0.5), (1.0, 0.0), (1.0, 1.0), (-1.0, 0.5)] {
            let cfg = ScoringConfig {
                temperature: k,
                threshold: g,
            };
            assert!(cfg.validate().is_err(), "{k} {g}");
        }
    }

    #[test]
    fn unknown_excluded_from_high_levels() {
        let scorer = TableScorer::default().with_fallback(0.0);
        let cfg = ScoringConfig {
            temperature: 1.0,
            threshold: 0.9,
        };
        let o = build_by_scoring(
            &scorer,
            &strings(&["x"]),
            &strings(&["kitchen", "unknown"]),
            &cfg,
            &PromptTemplates::default(),
        )
        .unwrap();
        assert_eq!(o.high_levels(), &["kitchen".to_string()]);
    }
}
