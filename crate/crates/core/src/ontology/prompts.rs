use serde::{Deserialize, Serialize};

/// Text templates for querying a language model.
///
/// Placeholders: `{low}`, `{high}` in the scoring template; `{k}`,
/// `{low_levels}`, `{high}`, `{other_highs}` in the completion template;
/// `{excluded}` in the exclusion suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplates {
    pub score_template: String,
    pub completion_template: String,
    pub exclusion_suffix: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            score_template: "{low} is often found in {high}".into(),
            completion_template: "Which {k} items from {low_levels} are most likely to \
                                  distinguish {high} from {other_highs}. Answer with a python \
                                  list using exact strings in {low_levels}."
                .into(),
            exclusion_suffix: " Do not respond with concepts in {excluded}.".into(),
        }
    }
}

/// Renders strings as a python list literal, e.g. `['sink', 'bed']`.
pub fn python_list<S: AsRef<str>>(items: &[S]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| {
            let s = s.as_ref();
            if s.contains('\'') {
                format!("\"{s}\"")
            } else {
                format!("'{s}'")
            }
        })
        .collect();
    format!("[{}]", quoted.join(", "))
}

impl PromptTemplates {
    pub fn render_score(&self, low: &str, high: &str) -> String {
        self.score_template.replace("{low}", low).replace("{high}", high)
    }

    pub fn render_completion(&self, k: usize, lows: &[String], highs: &[String], high: usize) -> String {
        let others: Vec<&String> = highs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != high)
            .map(|(_, h)| h)
            .collect();
        self.completion_template
            .replace("{k}", &k.to_string())
            .replace("{low_levels}", &python_list(lows))
            .replace("{other_highs}", &python_list(&others))
            .replace("{high}", &highs[high])
    }

    pub fn render_exclusion<S: AsRef<str>>(&self, excluded: &[S]) -> String {
        self.exclusion_suffix.replace("{excluded}", &python_list(excluded))
    }
}
