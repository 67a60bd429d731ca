//! Uniform client for chat, captioning, VQA, and judge backends.
//!
//! A [`Gateway`] wraps one [`Backend`] with precondition checks, bounded
//! retries, a caption cache, an in-flight cap, and a JSONL call log.

mod remote;
mod scripted;

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::observation::TextBudget;
use crate::raster::Raster;

pub use remote::{RemoteChatBackend, API_KEY_VAR, ENDPOINT_VAR, MODEL_VAR};
pub use scripted::{ScriptError, ScriptedBackend, ScriptDefaults};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image(Arc<Raster>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::Text(text.into())],
        }
    }

    pub fn has_images(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, Part::Image(_)))
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image(_)))
            .count()
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_units: u32,
}

impl SamplingConfig {
    /// Default profile for general chat backends.
    pub const GENERAL: SamplingConfig = SamplingConfig {
        temperature: 1.0,
        top_p: 0.9,
        max_output_units: 384,
    };
    /// Lower-temperature profile for backends that do better with it.
    pub const ALTERNATE: SamplingConfig = SamplingConfig {
        temperature: 0.6,
        top_p: 0.95,
        max_output_units: 384,
    };
    /// Vendor-suggested defaults for one backend family.
    pub const VENDOR_DEFAULT: SamplingConfig = SamplingConfig {
        temperature: 0.9,
        top_p: 1.0,
        max_output_units: 384,
    };
    /// Judge calls: deterministic.
    pub const JUDGE: SamplingConfig = SamplingConfig {
        temperature: 0.0,
        top_p: 1.0,
        max_output_units: 16,
    };

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        Ok(())
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig::GENERAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Chat,
    Caption,
    Vqa,
    Judge,
}

/// Identifies the episode step a chat request belongs to. Not part of the digest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeTag {
    pub task_id: String,
    pub step: usize,
    pub attempt: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub kind: RequestKind,
    pub messages: Vec<ChatMessage>,
    pub sampling: SamplingConfig,
    pub tag: Option<EpisodeTag>,
}

/// Canonical JSON of messages with images replaced by their pixel digest.
fn canonical_messages(messages: &[ChatMessage]) -> serde_json::Value {
    serde_json::Value::Array(
        messages
            .iter()
            .map(|m| {
                let parts: Vec<_> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text(t) => json!({"text": t}),
                        Part::Image(r) => json!({"image": r.digest()}),
                    })
                    .collect();
                json!({"role": m.role.as_str(), "parts": parts})
            })
            .collect(),
    )
}

/// Stable hash of the request kind and serialized messages.
pub fn request_digest(kind: RequestKind, messages: &[ChatMessage]) -> String {
    let canonical = json!({"kind": kind, "messages": canonical_messages(messages)});
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&canonical).expect("canonical json"));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("retryable transport failure: {0}")]
    Retryable(String),
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("backend refused: {0}")]
    Refusal(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("request of {used} {unit} exceeds budget of {limit}")]
    OverBudget {
        used: usize,
        limit: usize,
        unit: &'static str,
    },
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("backend refused: {0}")]
    Refusal(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// The wire-level half of a backend: sends one request, no retries.
pub trait Backend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    Fake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub supports_images: bool,
    pub context_budget: TextBudget,
    pub sampling: SamplingConfig,
}

impl BackendProfile {
    pub fn fake(name: impl Into<String>, supports_images: bool) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::Fake,
            endpoint: None,
            supports_images,
            context_budget: TextBudget::chars(1 << 20),
            sampling: SamplingConfig::GENERAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Correct,
    Incorrect,
    PartiallyCorrect,
}

/// Maps judge text to a verdict; anything unrecognized is `None`.
pub fn parse_judge_label(raw: &str) -> Option<JudgeVerdict> {
    let cleaned: String = raw
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    match cleaned.as_str() {
        "correct" => Some(JudgeVerdict::Correct),
        "incorrect" => Some(JudgeVerdict::Incorrect),
        "partially correct" | "partially_correct" | "partially-correct" => {
            Some(JudgeVerdict::PartiallyCorrect)
        }
        _ => None,
    }
}

const CAPTION_PROMPT: &str = "Describe this image in one short sentence.";

const JUDGE_SYSTEM: &str = "You grade answers produced by a web assistant. \
Compare the predicted answer against the reference answer for the given task and decide whether they mean the same thing. \
Reply with exactly one label: correct, incorrect, or partially correct.";

pub fn caption_messages(image: Arc<Raster>) -> Vec<ChatMessage> {
    vec![ChatMessage {
        role: Role::User,
        parts: vec![Part::Image(image), Part::Text(CAPTION_PROMPT.into())],
    }]
}

pub fn vqa_messages(image: Arc<Raster>, question: &str) -> Vec<ChatMessage> {
    vec![ChatMessage {
        role: Role::User,
        parts: vec![Part::Image(image), Part::Text(question.into())],
    }]
}

/// Judge prompt: intent, reference, and prediction only.
pub fn judge_messages(intent: &str, reference: &str, prediction: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::text(Role::System, JUDGE_SYSTEM),
        ChatMessage::text(
            Role::User,
            format!("Task: {intent}\nReference answer: {reference}\nPredicted answer: {prediction}\nLabel:"),
        ),
    ]
}

/// One call-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub timestamp_ms: u128,
    pub backend: String,
    pub kind: RequestKind,
    pub digest: String,
    pub attempt: usize,
    pub latency_ms: u128,
    pub outcome: String,
}

struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight wait");
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    profile: BackendProfile,
    backend: Arc<dyn Backend>,
    max_retries: usize,
    backoff: Duration,
    in_flight: InFlight,
    caption_cache: Mutex<HashMap<String, String>>,
    records: Mutex<Vec<CallRecord>>,
    log_file: Option<Mutex<File>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("profile", &self.profile.name)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl Gateway {
    pub const DEFAULT_RETRIES: usize = 3;

    pub fn new(profile: BackendProfile, backend: Arc<dyn Backend>) -> Self {
        Self {
            profile,
            backend,
            max_retries: Self::DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
            in_flight: InFlight {
                limit: 4,
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            caption_cache: Mutex::new(HashMap::new()),
            records: Mutex::new(Vec::new()),
            log_file: None,
        }
    }

    pub fn with_retries(mut self, max_retries: usize, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    pub fn with_in_flight_limit(mut self, limit: usize) -> Self {
        self.in_flight.limit = limit.max(1);
        self
    }

    pub fn with_call_log(mut self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        self.log_file = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn call_records(&self) -> Vec<CallRecord> {
        self.records.lock().expect("records lock").clone()
    }

    fn record(&self, rec: CallRecord) {
        if let Some(file) = &self.log_file {
            let mut f = file.lock().expect("log lock");
            let _ = writeln!(f, "{}", serde_json::to_string(&rec).expect("record json"));
        }
        self.records.lock().expect("records lock").push(rec);
    }

    fn check(&self, messages: &[ChatMessage]) -> Result<(), GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::Precondition("empty message list".into()));
        }
        if let Some(m) = messages.iter().find(|m| m.parts.is_empty()) {
            return Err(GatewayError::Precondition(format!(
                "{} message has no parts",
                m.role.as_str()
            )));
        }
        if !self.profile.supports_images && messages.iter().any(ChatMessage::has_images) {
            return Err(GatewayError::Precondition(format!(
                "backend `{}` does not accept images",
                self.profile.name
            )));
        }
        let chars: usize = messages
            .iter()
            .flat_map(|m| &m.parts)
            .map(|p| match p {
                Part::Text(t) => t.chars().count(),
                Part::Image(_) => 0,
            })
            .sum();
        let budget = self.profile.context_budget;
        let used = budget.units_for_chars(chars);
        if used > budget.max_units {
            return Err(GatewayError::OverBudget {
                used,
                limit: budget.max_units,
                unit: budget.unit.as_str(),
            });
        }
        Ok(())
    }

    /// Sends a request with bounded retries on transport failures.
    pub fn send(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.check(&request.messages)?;
        request.sampling.validate().map_err(GatewayError::Precondition)?;
        let digest = request_digest(request.kind, &request.messages);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _slot = self.in_flight.acquire();
                self.backend.send(request)
            };
            let outcome = match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => e.to_string(),
            };
            self.record(CallRecord {
                timestamp_ms: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
                backend: self.profile.name.clone(),
                kind: request.kind,
                digest: digest.clone(),
                attempt,
                latency_ms: started.elapsed().as_millis(),
                outcome,
            });
            match result {
                Ok(text) if text.trim().is_empty() => {
                    return Err(GatewayError::Refusal("empty response".into()))
                }
                Ok(text) => return Ok(text),
                Err(TransportError::Retryable(message)) => {
                    if attempt > self.max_retries {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    tracing::warn!(backend = %self.profile.name, attempt, %message, "retrying");
                    std::thread::sleep(self.backoff * (1 << (attempt - 1).min(6)) as u32);
                }
                Err(TransportError::Permanent(m)) => return Err(GatewayError::Permanent(m)),
                Err(TransportError::Refusal(m)) => return Err(GatewayError::Refusal(m)),
            }
        }
    }

    pub fn complete(
        &self,
        messages: Vec<ChatMessage>,
        sampling: SamplingConfig,
        tag: Option<EpisodeTag>,
    ) -> Result<String, GatewayError> {
        self.send(&CompletionRequest {
            kind: RequestKind::Chat,
            messages,
            sampling,
            tag,
        })
    }

    /// Caption text, cached by image digest.
    pub fn caption(&self, image: Arc<Raster>) -> Result<String, GatewayError> {
        let key = image.digest();
        if let Some(hit) = self.caption_cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let text = self.send(&CompletionRequest {
            kind: RequestKind::Caption,
            messages: caption_messages(image),
            sampling: self.profile.sampling,
            tag: None,
        })?;
        let text = text.trim().to_string();
        self.caption_cache
            .lock()
            .expect("cache lock")
            .insert(key, text.clone());
        Ok(text)
    }

    pub fn vqa(&self, image: Arc<Raster>, question: &str) -> Result<String, GatewayError> {
        self.send(&CompletionRequest {
            kind: RequestKind::Vqa,
            messages: vqa_messages(image, question),
            sampling: self.profile.sampling,
            tag: None,
        })
    }

    /// Semantic-equivalence verdict. Identical strings short-circuit without
    /// a backend call; unrecognized judge text counts as incorrect.
    pub fn judge_fuzzy(
        &self,
        intent: &str,
        reference: &str,
        prediction: &str,
    ) -> Result<JudgeVerdict, GatewayError> {
        if reference.trim() == prediction.trim() {
            return Ok(JudgeVerdict::Correct);
        }
        let raw = self.send(&CompletionRequest {
            kind: RequestKind::Judge,
            messages: judge_messages(intent, reference, prediction),
            sampling: SamplingConfig::JUDGE,
            tag: None,
        })?;
        Ok(parse_judge_label(&raw).unwrap_or_else(|| {
            tracing::warn!(raw = %raw, "unrecognized judge output, scoring incorrect");
            JudgeVerdict::Incorrect
        }))
    }
}
