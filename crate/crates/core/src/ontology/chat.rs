//! Chat-completion backends: a live HTTP client and deterministic mocks.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use diffcore::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::prompts::python_list;
use super::SpatialOntology;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "ONTO_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "ONTO_LLM_ENDPOINT";
const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

/// Failure reported by a language-model backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackendError(pub String);

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendError {}

/// Sends one user prompt and returns the assistant's reply text.
pub trait ChatClient {
    fn complete(&self, prompt: &str) -> std::result::Result<String, BackendError>;
}

/// Replays a fixed list of replies in order and records every prompt.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<String>>,
    transcript: Mutex<Vec<String>>,
}

impl ScriptedChat {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            transcript: Mutex::default(),
        }
    }

    /// Prompts received so far, in order.
    pub fn transcript(&self) -> Vec<String> {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        self.transcript
            .lock()
            .expect("transcript lock")
            .push(prompt.to_string());
        self.replies
            .lock()
            .expect("replies lock")
            .pop_front()
            .ok_or_else(|| BackendError("script exhausted".into()))
    }
}

/// Answers completion prompts from a planted ontology.
///
/// The high-level concept is read from the `distinguish <h> from` clause.
/// Replies list that concept's planted low-level concepts in a seeded order.
/// With probability `hallucination_rate` a reply also contains an invented
/// concept, unless the prompt already carries an exclusion clause.
#[derive(Debug)]
pub struct PlantedChat {
    planted: SpatialOntology,
    seed: u64,
    hallucination_rate: f64,
    calls: Mutex<HashMap<String, u64>>,
}

impl PlantedChat {
    pub fn new(planted: SpatialOntology, seed: u64) -> Self {
        Self {
            planted,
            seed,
            hallucination_rate: 0.0,
            calls: Mutex::default(),
        }
    }

    pub fn with_hallucination_rate(mut self, rate: f64) -> Self {
        self.hallucination_rate = rate;
        self
    }

    fn asked_concept<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        let start = prompt.find("distinguish ")? + "distinguish ".len();
        let rest = &prompt[start..];
        let end = rest.find(" from ")?;
        Some(&rest[..end])
    }
}

fn text_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl ChatClient for PlantedChat {
    fn complete(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        let concept = self
            .asked_concept(prompt)
            .ok_or_else(|| BackendError("prompt names no high-level concept".into()))?;
        let high = self
            .planted
            .high_index(concept)
            .ok_or_else(|| BackendError(format!("unknown high-level concept {concept:?}")))?;
        let call = {
            let mut calls = self.calls.lock().expect("calls lock");
            let c = calls.entry(prompt.to_string()).or_insert(0);
            *c += 1;
            *c
        };
        let mut rng = seeded(derive_seed(derive_seed(self.seed, text_hash(prompt)), call));
        let mut answer: Vec<String> = self
            .planted
            .lows_of(high)
            .into_iter()
            .map(|l| self.planted.low_levels()[l].clone())
            .collect();
        answer.shuffle(&mut rng);
        if !prompt.contains("Do not respond") && rng.random_bool(self.hallucination_rate) {
            answer.push(format!("imaginary-{}", rng.random_range(0..1000)));
        }
        Ok(python_list(&answer))
    }
}

/// Settings for [`HttpChatClient`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Attempts per request for transport failures, HTTP 429 and 5xx.
    pub max_attempts: u32,
    /// First back-off delay; doubles after each failed attempt.
    pub backoff: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl HttpChatConfig {
    /// Reads the API key (required) and endpoint (optional) from the
    /// environment.
    pub fn from_env(model: &str, cache_dir: Option<PathBuf>) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config(format!("environment variable {API_KEY_ENV} is not set")))?;
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.into());
        Ok(Self {
            endpoint,
            api_key,
            model: model.into(),
            temperature: 1.0,
            timeout: Duration::from_secs(60),
            max_attempts: 4,
            backoff: Duration::from_millis(500),
            cache_dir,
        })
    }
}

/// Client for OpenAI-compatible `chat/completions` endpoints.
///
/// Replies are cached on disk keyed by a hash of the model, the prompt and
/// how many times this client has already sent that prompt, so repeated
/// queries still sample independently while reruns replay the same replies.
pub struct HttpChatClient {
    config: HttpChatConfig,
    agent: ureq::Agent,
    occurrences: Mutex<HashMap<String, u64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt: String,
    occurrence: u64,
    response: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpChatClient {
    pub fn new(config: HttpChatConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            occurrences: Mutex::default(),
        }
    }

    fn cache_path(&self, prompt: &str, occurrence: u64) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(self.config.model.as_bytes());
        h.update([0]);
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(occurrence.to_le_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn send_once(&self, prompt: &str) -> std::result::Result<String, Attempt> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no choices".into()))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        let occurrence = {
            let mut occ = self.occurrences.lock().expect("occurrence lock");
            let c = occ.entry(prompt.to_string()).or_insert(0);
            *c += 1;
            *c
        };
        let cache = self.cache_path(prompt, occurrence);
        if let Some(path) = &cache {
            if let Ok(text) = std::fs::read_to_string(path) {
                if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
                    return Ok(entry.response);
                }
            }
        }

        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.send_once(prompt) {
                Ok(response) => {
                    if let Some(path) = &cache {
                        let entry = CacheEntry {
                            model: self.config.model.clone(),
                            prompt: prompt.into(),
                            occurrence,
                            response: response.clone(),
                        };
                        let written = path.parent().map_or(Ok(()), std::fs::create_dir_all).and_then(|_| {
                            std::fs::write(path, serde_json::to_vec_pretty(&entry).expect("cache entry serializes"))
                        });
                        if let Err(e) = written {
                            return Err(BackendError(format!("cannot write cache {}: {e}", path.display())));
                        }
                    }
                    return Ok(response);
                }
                Err(Attempt::Fatal(msg)) => return Err(BackendError(msg)),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(BackendError(format!(
            "gave up after {} attempts: {last}",
            self.config.max_attempts.max(1)
        )))
    }
}
