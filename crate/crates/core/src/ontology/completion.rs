//! Ontology construction by prompting a chat model for the `k` low-level
//! concepts that best distinguish each high-level concept.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::chat::ChatClient;
use super::prompts::PromptTemplates;
use super::{check_vocabularies, without_unknown, SpatialOntology};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionConfig {
    /// Edges kept per high-level concept.
    pub k: usize,
    /// Times each query is repeated (`N`).
    pub repetitions: usize,
    /// Queries allowed per repetition, including the first one.
    pub max_retries: usize,
}

impl CompletionConfig {
    pub fn validate(&self, num_low: usize) -> Result<()> {
        if self.k == 0 || self.k > num_low {
            return Err(Error::Config(format!("k must lie in 1..={num_low}, got {}", self.k)));
        }
        if self.repetitions == 0 || self.max_retries == 0 {
            return Err(Error::Config("repetitions and max_retries must be positive".into()));
        }
        Ok(())
    }
}

fn quoted_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = text.char_indices();
    while let Some((i, c)) = chars.next() {
        if c == '\'' || c == '"' {
            if let Some(len) = text[i + 1..].find(c) {
                out.push(text[i + 1..i + 1 + len].to_string());
                // skip past the closing quote
                let close = i + 1 + len;
                for (j, _) in chars.by_ref() {
                    if j >= close {
                        break;
                    }
                }
            }
        }
    }
    out
}

/// Extracts concept strings from a free-form reply.
///
/// The bracketed part is used when present. Quoted strings win; otherwise the
/// text is split on commas and newlines with list decoration stripped.
pub fn parse_concept_list(reply: &str) -> Vec<String> {
    let body = match (reply.find('['), reply.rfind(']')) {
        (Some(a), Some(b)) if a < b => &reply[a + 1..b],
        _ => reply,
    };
    let quoted = quoted_tokens(body);
    let raw = if quoted.is_empty() {
        body.split([',', '\n'])
            .map(|t| {
                t.trim()
                    .trim_start_matches(['-', '*', '•'])
                    .trim_start_matches(|c: char| c.is_ascii_digit())
                    .trim_start_matches(['.', ')'])
                    .trim()
                    .trim_matches(|c: char| c == '`' || c == '[' || c == ']')
                    .trim()
                    .to_string()
            })
            .collect()
    } else {
        quoted
    };
    raw.into_iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Builds an ontology by asking `client`, for each high-level concept, which
/// `k` low-level concepts distinguish it from the others.
///
/// Replies naming concepts outside the low-level vocabulary are rejected and
/// re-queried with an exclusion clause listing every hallucinated concept so
/// far. Each query is repeated `repetitions` times; the `k` most frequent
/// concepts across the valid replies become edges (ties lexicographic).
pub fn build_by_completion(
    client: &dyn ChatClient,
    low_levels: &[String],
    high_levels: &[String],
    config: &CompletionConfig,
    templates: &PromptTemplates,
) -> Result<SpatialOntology> {
    let high_levels = without_unknown(high_levels);
    check_vocabularies(low_levels, &high_levels)?;
    config.validate(low_levels.len())?;
    let mut onto = SpatialOntology::new(low_levels.to_vec(), high_levels.clone())?;

    for (h, high) in high_levels.iter().enumerate() {
        let base = templates.render_completion(config.k, low_levels, &high_levels, h);
        let mut hallucinated: Vec<String> = Vec::new();
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();

        for _ in 0..config.repetitions {
            let mut prompt = base.clone();
            let mut accepted = None;
            for _ in 0..config.max_retries {
                let reply = client.complete(&prompt).map_err(|e| Error::Backend {
                    prompt: prompt.clone(),
                    message: e.0,
                })?;
                let tokens = parse_concept_list(&reply);
                let unknown: Vec<&String> = tokens.iter().filter(|t| !low_levels.contains(t)).collect();
                if !unknown.is_empty() {
                    for u in unknown {
                        if !hallucinated.contains(u) {
                            hallucinated.push(u.clone());
                        }
                    }
                    prompt = format!("{base}{}", templates.render_exclusion(&hallucinated));
                    continue;
                }
                if tokens.is_empty() {
                    continue;
                }
                accepted = Some(tokens);
                break;
            }
            let tokens = accepted.ok_or_else(|| Error::Construction {
                concept: high.clone(),
                message: if hallucinated.is_empty() {
                    format!("no valid concepts after {} queries", config.max_retries)
                } else {
                    format!(
                        "still answering with unknown concepts {hallucinated:?} after {} queries",
                        config.max_retries
                    )
                },
            })?;
            let mut seen = HashSet::new();
            for t in &tokens {
                if seen.insert(t.as_str()) {
                    let idx = onto.low_index(t).expect("validated against vocabulary");
                    *tally.entry(low_levels[idx].as_str()).or_default() += 1;
                }
            }
        }

        if tally.len() < config.k {
            return Err(Error::Construction {
                concept: high.clone(),
                message: format!("only {} distinct concepts proposed, need {}", tally.len(), config.k),
            });
        }
        // BTreeMap iteration is lexicographic; a stable sort keeps that order
        // among equal counts.
        let mut ranked: Vec<(&str, usize)> = tally.into_iter().collect();
        ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
        for (concept, _) in ranked.into_iter().take(config.k) {
            let l = onto.low_index(concept).expect("known concept");
            onto.set_edge(h, l, true)?;
        }
    }
    Ok(onto)
}
