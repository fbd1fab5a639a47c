//! Chat-completion backends behind one interface.
//!
//! A [`Backend`] is a named configuration around a [`ChatBackend`]: a
//! keyword mock, a scripted sequence, a fixture replay store, or a live
//! HTTP endpoint. It adds retries with exponential backoff, an optional
//! rate limit and concurrency cap, and optional fixture recording.
//! [`detect`] turns a prompt into a [`DetectionResult`], persisting the raw
//! answer to the audit log before the verdict is parsed.

mod backends;
mod http;
mod limits;

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backends::{
    fixture_key, FixtureBackend, FixtureRecord, MockBackend, MockRule, RecordingBackend,
    ScriptedBackend,
};
pub use http::{http_request_body, HttpBackend};
use limits::{RateLimiter, Semaphore};

use crate::prompt_builder::{parse_verdict, PromptBundle};
use crate::Label;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("no fixture recorded for key {key}")]
    FixtureMissing { key: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("I/O: {0}")]
    Io(String),
    #[error("backend `{0}` does not allow few-shot exemplars")]
    ExemplarsNotAllowed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        last: Box<BackendError>,
    },
}

impl BackendError {
    /// Failures worth retrying: transport errors, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// One completion call. Implementations must be callable from several
/// threads at once.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Scripted,
    Fixture,
    Http,
}

/// A named backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Whether few-shot exemplars may be sent. Defaults to true for local
    /// kinds and false for `http`.
    #[serde(default)]
    pub allows_exemplars: Option<bool>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default)]
    pub rate_limit_per_min: Option<u32>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    /// Record every successful exchange as a fixture under this directory.
    #[serde(default)]
    pub record_dir: Option<PathBuf>,
    /// `mock`: the keyword rule.
    #[serde(default)]
    pub mock_rule: Option<MockRule>,
    /// `scripted`: answers returned in call order, the last one repeating.
    #[serde(default)]
    pub responses: Vec<String>,
    /// `fixture`: directory of recorded exchanges.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    /// `http`: chat-completion URL.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// `http`: environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_max_tokens() -> u32 {
    1000
}
fn default_temperature() -> f64 {
    0.7
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_s() -> u64 {
    120
}

impl BackendSpec {
    pub fn new(name: impl Into<String>, kind: BackendKind) -> Self {
        Self {
            name: name.into(),
            kind,
            max_tokens: default_max_tokens(),
            temperature: default_temperature(),
            allows_exemplars: None,
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
            rate_limit_per_min: None,
            max_concurrency: None,
            record_dir: None,
            mock_rule: None,
            responses: Vec::new(),
            fixture_dir: None,
            endpoint: None,
            model: None,
            api_key_env: None,
        }
    }

    pub fn mock(name: impl Into<String>) -> Self {
        Self::new(name, BackendKind::Mock)
    }

    pub fn scripted(name: impl Into<String>, responses: Vec<String>) -> Self {
        Self {
            responses,
            ..Self::new(name, BackendKind::Scripted)
        }
    }

    pub fn fixture(name: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        Self {
            fixture_dir: Some(dir.into()),
            ..Self::new(name, BackendKind::Fixture)
        }
    }

    pub fn allows_exemplars(&self) -> bool {
        self.allows_exemplars
            .unwrap_or(self.kind != BackendKind::Http)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("empty backend name".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("invalid temperature {}", self.temperature));
        }
        if self.max_concurrency == Some(0) || self.rate_limit_per_min == Some(0) {
            return bad("limits must be positive".into());
        }
        match self.kind {
            BackendKind::Scripted if self.responses.is_empty() => {
                bad("scripted backend needs responses".into())
            }
            BackendKind::Fixture if self.fixture_dir.is_none() => {
                bad("fixture backend needs fixture_dir".into())
            }
            BackendKind::Http if self.endpoint.is_none() => bad("http backend needs endpoint".into()),
            _ => Ok(()),
        }
    }
}

/// A configured backend with retry and rate-limit policy applied.
pub struct Backend {
    spec: BackendSpec,
    chat: Box<dyn ChatBackend>,
    limiter: Option<RateLimiter>,
    permits: Option<Semaphore>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Backend {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let chat: Box<dyn ChatBackend> = match spec.kind {
            BackendKind::Mock => Box::new(MockBackend::new(spec.mock_rule.clone().unwrap_or_default())),
            BackendKind::Scripted => Box::new(ScriptedBackend::new(spec.responses.clone())),
            BackendKind::Fixture => Box::new(FixtureBackend::new(
                &spec.name,
                spec.fixture_dir.clone().expect("validated"),
            )),
            BackendKind::Http => Box::new(HttpBackend::from_spec(spec)?),
        };
        Ok(Self::with_chat(spec.clone(), chat))
    }

    /// Wraps a custom [`ChatBackend`] with the spec's policies.
    pub fn with_chat(spec: BackendSpec, chat: Box<dyn ChatBackend>) -> Self {
        let chat: Box<dyn ChatBackend> = match &spec.record_dir {
            Some(dir) => Box::new(RecordingBackend::new(&spec.name, dir.clone(), chat)),
            None => chat,
        };
        Self {
            limiter: spec
                .rate_limit_per_min
                .map(|n| RateLimiter::new(Duration::from_secs_f64(60.0 / f64::from(n)))),
            permits: spec.max_concurrency.map(Semaphore::new),
            spec,
            chat,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Number of attempts made against the underlying backend.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// A request carrying this backend's sampling settings.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            messages,
            temperature: self.spec.temperature,
            max_tokens: self.spec.max_tokens,
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let _permit = self.permits.as_ref().map(Semaphore::acquire);
        let attempts = self.spec.retries + 1;
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.wait();
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            attempt += 1;
            match self.chat.complete(req) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let delay = self.spec.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!(
                        "{}: attempt {attempt} failed ({e}), retrying in {delay} ms",
                        self.spec.name
                    );
                    std::thread::sleep(Duration::from_millis(delay.min(60_000)));
                }
                Err(e) if e.is_transient() => {
                    return Err(BackendError::Exhausted {
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Model output for one case. `Abstain` means no label could be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Prediction {
    ASD,
    TD,
    Abstain,
}

impl Prediction {
    pub fn label(self) -> Option<Label> {
        match self {
            Prediction::ASD => Some(Label::ASD),
            Prediction::TD => Some(Label::TD),
            Prediction::Abstain => None,
        }
    }
}

impl From<Label> for Prediction {
    fn from(l: Label) -> Self {
        match l {
            Label::ASD => Prediction::ASD,
            Label::TD => Prediction::TD,
        }
    }
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Prediction::ASD => "ASD",
            Prediction::TD => "TD",
            Prediction::Abstain => "Abstain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub case_id: String,
    pub backend: String,
    pub prediction: Prediction,
    pub rationale: String,
    pub raw_response: String,
    pub latency_ms: u64,
    pub prompt_hash: String,
}

/// Hex SHA-256 over the request's role-tagged messages.
pub fn prompt_hash(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    for m in &req.messages {
        h.update(serde_json::to_string(&m.role).expect("role serializes"));
        h.update([0u8]);
        h.update(m.content.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// System message plus one user message with everything else.
pub fn bundle_messages(bundle: &PromptBundle) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(bundle.system_text.clone()),
        ChatMessage::user(bundle.user_text()),
    ]
}

/// Append-only JSONL record of raw model answers.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AuditEntry {
    pub case_id: String,
    pub backend: String,
    pub prompt_hash: String,
    pub raw_response: String,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &AuditEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(entry).expect("audit entry serializes");
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| BackendError::Io(format!("{}: {e}", self.path.display())))
    }
}

/// Runs one request and parses the verdict. The raw answer reaches the
/// audit log before parsing; an unparseable answer becomes `Abstain`.
pub fn detect_request(
    case_id: &str,
    req: &ChatRequest,
    backend: &Backend,
    audit: Option<&AuditLog>,
) -> Result<DetectionResult, BackendError> {
    let hash = prompt_hash(req);
    let started = Instant::now();
    let raw = backend.complete(req)?;
    let latency_ms = started.elapsed().as_millis() as u64;
    if let Some(a) = audit {
        a.append(&AuditEntry {
            case_id: case_id.to_string(),
            backend: backend.name().to_string(),
            prompt_hash: hash.clone(),
            raw_response: raw.clone(),
        })?;
    }
    let (prediction, rationale) = match parse_verdict(&raw) {
        Ok(v) => (v.label.into(), v.rationale),
        Err(_) => {
            log::warn!("{case_id}: {} answer has no label, abstaining", backend.name());
            (Prediction::Abstain, raw.trim().to_string())
        }
    };
    Ok(DetectionResult {
        case_id: case_id.to_string(),
        backend: backend.name().to_string(),
        prediction,
        rationale,
        raw_response: raw,
        latency_ms,
        prompt_hash: hash,
    })
}

/// Single-model detection for a rendered prompt.
pub fn detect(
    case_id: &str,
    bundle: &PromptBundle,
    backend: &Backend,
    audit: Option<&AuditLog>,
) -> Result<DetectionResult, BackendError> {
    if !bundle.exemplars.is_empty() && !backend.spec().allows_exemplars() {
        return Err(BackendError::ExemplarsNotAllowed(backend.name().to_string()));
    }
    detect_request(case_id, &backend.request(bundle_messages(bundle)), backend, audit)
}
