//! Zero/few-shot prompting of chat-completion endpoints.
//!
//! Prompts ask for answers in the same marker format used for training
//! targets, so responses go through [`parse_target`] like any other
//! generation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grammar::{
    category_phrase, linearize, marker_prompt, parse_target, project_tuples, ParsedTarget, SEPARATOR,
};
use crate::model::{Corpus, LabelCatalog, Marker, Polarity, Task};

/// Bumped whenever the rendered prompt text changes.
pub const PROMPT_TEMPLATE_VERSION: &str = "xabsa-prompt-v1";

pub const MAX_SHOTS: usize = 10;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{0} demonstrations requested, at most {MAX_SHOTS} are supported")]
    TooManyShots(usize),
    #[error("endpoint unreachable after {attempts} attempts: {detail}")]
    EndpointUnreachable { attempts: usize, detail: String },
    #[error("endpoint rejected the credential (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: usize },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no recorded response for prompt {0}")]
    FixtureMissing(String),
    #[error("missing configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub task: Task,
    pub language: String,
    /// `(sentence text, linearized target)` pairs.
    pub demonstrations: Vec<(String, String)>,
}

impl PromptSpec {
    pub fn zero_shot(task: Task, language: impl Into<String>) -> Self {
        PromptSpec {
            task,
            language: language.into(),
            demonstrations: Vec::new(),
        }
    }

    /// Demonstrations are the first `n_shots` training sentences in corpus
    /// order, with targets linearized exactly as for training.
    pub fn from_training(task: Task, train: &Corpus, n_shots: usize, catalog: &LabelCatalog) -> Result<Self, LlmError> {
        if n_shots > MAX_SHOTS {
            return Err(LlmError::TooManyShots(n_shots));
        }
        let demonstrations = train
            .sentences
            .iter()
            .take(n_shots)
            .map(|s| {
                let target = linearize(&project_tuples(&s.tuples, task), task, catalog);
                (s.text.clone(), target)
            })
            .collect();
        Ok(PromptSpec {
            task,
            language: train.language.clone(),
            demonstrations,
        })
    }

    pub fn n_shots(&self) -> usize {
        self.demonstrations.len()
    }
}

fn element_name(marker: Marker) -> &'static str {
    match marker {
        Marker::A => "aspect term",
        Marker::C => "aspect category",
        Marker::P => "sentiment polarity",
    }
}

fn format_example(task: Task) -> String {
    let one = task
        .marker_order()
        .iter()
        .map(|m| format!("{} ...", m.tag()))
        .collect::<Vec<_>>()
        .join(" ");
    format!("{one} {SEPARATOR} {one}")
}

/// Render the prompt. Only the task's elements are described; the polarity
/// instruction is absent for tasks without `[P]`, and so on.
pub fn build_prompt(spec: &PromptSpec, sentence_text: &str, catalog: &LabelCatalog) -> String {
    let task = spec.task;
    let names: Vec<&str> = task.marker_order().iter().map(|&m| element_name(m)).collect();
    let mut p = String::new();
    writeln!(p, "You are an expert in aspect-based sentiment analysis.").unwrap();
    writeln!(
        p,
        "Find every opinion in the review sentence below (language: {}) and report its {}.",
        spec.language,
        names.join(", ")
    )
    .unwrap();
    writeln!(p).unwrap();
    for &m in task.marker_order() {
        match m {
            Marker::A => writeln!(
                p,
                "{} {}: the words of the sentence naming the opinion target, copied exactly; write \"{}\" when the target is not mentioned.",
                m.tag(),
                element_name(m),
                catalog.implicit_word
            ),
            Marker::C => {
                let cats: Vec<String> = catalog.categories.iter().map(category_phrase).collect();
                writeln!(p, "{} {}: one of: {}.", m.tag(), element_name(m), cats.join(", "))
            }
            Marker::P => {
                let words: Vec<String> = Polarity::ALL
                    .iter()
                    .map(|&pol| format!("{} ({})", catalog.polarity_word(pol), pol.label()))
                    .collect();
                writeln!(p, "{} {}: one of: {}.", m.tag(), element_name(m), words.join(", "))
            }
        }
        .unwrap();
    }
    writeln!(p).unwrap();
    writeln!(
        p,
        "Answer with the tuples only, each written as {} and separated by {SEPARATOR}, for example: {}",
        marker_prompt(task),
        format_example(task)
    )
    .unwrap();
    if !spec.demonstrations.is_empty() {
        writeln!(p).unwrap();
        writeln!(p, "Examples:").unwrap();
        for (text, target) in &spec.demonstrations {
            writeln!(p, "Sentence: {text}").unwrap();
            writeln!(p, "Answer: {target}").unwrap();
        }
    }
    writeln!(p).unwrap();
    writeln!(p, "Sentence: {sentence_text}").unwrap();
    write!(p, "Answer:").unwrap();
    p
}

/// Hex SHA-256 of the prompt; the fixture file name.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Directory of `<prompt hash>.txt` files holding raw responses.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", prompt_key(prompt)))
    }

    pub fn get(&self, prompt: &str) -> Result<String, LlmError> {
        let path = self.path(prompt);
        match fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes).map_err(|e| LlmError::BadResponse(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(LlmError::FixtureMissing(prompt_key(prompt))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, prompt: &str, response: &str) -> Result<(), LlmError> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.path(prompt), response)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_attempts: usize,
    pub base_backoff: Duration,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            api_key: None,
            model: model.into(),
            temperature: 0.0,
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// URL from `LLM_ENDPOINT`, credential from `LLM_API_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, LlmError> {
        let url = std::env::var("LLM_ENDPOINT").map_err(|_| LlmError::Config("LLM_ENDPOINT is not set".into()))?;
        let mut cfg = EndpointConfig::new(url, model);
        cfg.api_key = std::env::var("LLM_API_KEY").ok();
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum LlmClient {
    Live(EndpointConfig),
    Replay(FixtureStore),
    /// Call the endpoint and store each response in the fixture store.
    Record(EndpointConfig, FixtureStore),
}

enum AttemptError {
    Transient(String),
    RateLimited,
    Fatal(LlmError),
}

fn attempt(client: &reqwest::blocking::Client, cfg: &EndpointConfig, body: &str) -> Result<String, AttemptError> {
    let mut req = client
        .post(&cfg.url)
        .header("Content-Type", "application/json")
        .body(body.to_string());
    if let Some(key) = &cfg.api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let resp = req.send().map_err(|e| AttemptError::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| AttemptError::Transient(e.to_string()))?;
    match status {
        200..=299 => {}
        401 | 403 => return Err(AttemptError::Fatal(LlmError::AuthFailure { status })),
        429 => return Err(AttemptError::RateLimited),
        500..=599 => return Err(AttemptError::Transient(format!("HTTP {status}: {text}"))),
        _ => return Err(AttemptError::Fatal(LlmError::Http { status, body: text })),
    }
    let value: Value =
        serde_json::from_str(&text).map_err(|e| AttemptError::Fatal(LlmError::BadResponse(e.to_string())))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or(AttemptError::Fatal(LlmError::BadResponse(text)))
}

/// Single-turn chat completion with exponential backoff on transient
/// failures.
pub fn call_endpoint(prompt: &str, cfg: &EndpointConfig) -> Result<String, LlmError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| LlmError::Config(e.to_string()))?;
    let body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    })
    .to_string();
    let attempts = cfg.max_attempts.max(1);
    let mut last = AttemptError::Transient(String::new());
    for i in 0..attempts {
        if i > 0 {
            std::thread::sleep(cfg.base_backoff * 2u32.pow(i as u32 - 1));
        }
        match attempt(&client, cfg, &body) {
            Ok(content) => return Ok(content),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(e) => last = e,
        }
    }
    Err(match last {
        AttemptError::RateLimited => LlmError::RateLimited { attempts },
        AttemptError::Transient(detail) => LlmError::EndpointUnreachable { attempts, detail },
        AttemptError::Fatal(e) => e,
    })
}

impl LlmClient {
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        match self {
            LlmClient::Live(cfg) => call_endpoint(prompt, cfg),
            LlmClient::Replay(store) => store.get(prompt),
            LlmClient::Record(cfg, store) => {
                let response = call_endpoint(prompt, cfg)?;
                store.put(prompt, &response)?;
                Ok(response)
            }
        }
    }

    /// Complete many prompts with at most `in_flight` concurrent requests.
    /// Results keep the input order.
    pub fn complete_all(&self, prompts: &[String], in_flight: usize) -> Vec<Result<String, LlmError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, LlmError>>>> =
            Mutex::new((0..prompts.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..in_flight.clamp(1, prompts.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.complete(&prompts[i]);
                    results.lock().expect("result lock")[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("result lock")
            .into_iter()
            .map(|r| r.expect("every prompt completed"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatExchange {
    pub request: String,
    pub response: String,
    pub parsed: ParsedTarget,
}

impl ChatExchange {
    pub fn new(request: String, response: String, task: Task, catalog: &LabelCatalog) -> Self {
        let parsed = parse_target(&response, task, catalog);
        ChatExchange {
            request,
            response,
            parsed,
        }
    }
}

pub fn exchange(
    client: &LlmClient,
    spec: &PromptSpec,
    sentence_text: &str,
    catalog: &LabelCatalog,
) -> Result<ChatExchange, LlmError> {
    let request = build_prompt(spec, sentence_text, catalog);
    let response = client.complete(&request)?;
    Ok(ChatExchange::new(request, response, spec.task, catalog))
}
