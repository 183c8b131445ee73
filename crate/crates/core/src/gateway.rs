//! One completion interface over a live chat-completions endpoint, a
//! directory of recorded responses, and a scripted list for tests.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MODEL_ID: &str = "gpt-4-0613";
pub const DEFAULT_API_KEY_ENV: &str = "IBL_API_KEY";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const FIXTURE_EXTENSION: &str = "txt";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no fixture for `{tag}` at {}", path.display())]
    MissingFixture { tag: String, path: PathBuf },
    #[error("fixture for `{0}` already exists")]
    DuplicateFixture(String),
    #[error("invalid attempt tag `{0}`")]
    InvalidTag(String),
    #[error("scripted backend has no responses left")]
    ScriptedExhausted,
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingCredential(String),
    #[error("endpoint refused the credential (HTTP {0})")]
    AuthFailure(u16),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("endpoint rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Key of one logical generation attempt. Used as a file stem, so it may
/// not contain path separators, start with a dot, or contain `..`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttemptTag(String);

impl AttemptTag {
    pub fn new(tag: impl Into<String>) -> Result<Self, GatewayError> {
        let tag = tag.into();
        let ok = !tag.is_empty()
            && !tag.starts_with('.')
            && !tag.contains("..")
            && tag.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
        if ok {
            Ok(Self(tag))
        } else {
            Err(GatewayError::InvalidTag(tag))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttemptTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for AttemptTag {
    type Error = GatewayError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AttemptTag> for String {
    fn from(tag: AttemptTag) -> String {
        tag.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub attempt_tag: AttemptTag,
}

impl CompletionRequest {
    fn check(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError>;

    /// How many requests callers may usefully have in flight at once.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Hands out a fixed list of responses in order, ignoring the request.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { responses: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.check()?;
        self.responses.lock().unwrap().pop_front().ok_or(GatewayError::ScriptedExhausted)
    }
}

pub fn fixture_path(dir: &Path, tag: &AttemptTag) -> PathBuf {
    dir.join(format!("{tag}.{FIXTURE_EXTENSION}"))
}

/// Writes `<dir>/<tag>.txt`. Refuses to replace an existing fixture unless
/// `force` is set.
pub fn record_fixture(dir: &Path, tag: &AttemptTag, response: &str, force: bool) -> Result<PathBuf, GatewayError> {
    fs::create_dir_all(dir)?;
    let path = fixture_path(dir, tag);
    let mut options = fs::OpenOptions::new();
    options.write(true);
    if force {
        options.create(true).truncate(true);
    } else {
        options.create_new(true);
    }
    let mut file = options.open(&path).map_err(|e| match e.kind() {
        io::ErrorKind::AlreadyExists => GatewayError::DuplicateFixture(tag.to_string()),
        _ => GatewayError::Io(e),
    })?;
    file.write_all(response.as_bytes())?;
    Ok(path)
}

pub fn read_fixture(dir: &Path, tag: &AttemptTag) -> Result<String, GatewayError> {
    let path = fixture_path(dir, tag);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(text),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            Err(GatewayError::MissingFixture { tag: tag.to_string(), path })
        }
        Err(e) => Err(e.into()),
    }
}

/// Serves recorded responses keyed by attempt tag.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.check()?;
        read_fixture(&self.dir, &req.attempt_tag)
    }
}

/// Exponential backoff for transient failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_attempts: u32,
    /// Upper bound on any single wait, including server hints.
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { base_delay_ms: 1000, factor: 2.0, max_attempts: 5, max_delay_ms: 120_000 }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (1-based), given the previous wait
    /// and an optional server hint. Never shorter than the previous wait.
    pub fn delay(&self, retry: u32, previous: Duration, hint: Option<Duration>) -> Duration {
        let scheduled = self.base_delay_ms as f64 * self.factor.powi(retry.saturating_sub(1) as i32);
        let scheduled = Duration::from_millis(scheduled.min(self.max_delay_ms as f64) as u64);
        let cap = Duration::from_millis(self.max_delay_ms);
        scheduled.max(hint.unwrap_or_default().min(cap)).max(previous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatPayload<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

/// The JSON body sent for `req`.
pub fn chat_payload(req: &CompletionRequest) -> serde_json::Value {
    serde_json::to_value(ChatPayload {
        model: &req.model_id,
        messages: [
            ChatMessage { role: "system", content: &req.system_text },
            ChatMessage { role: "user", content: &req.user_text },
        ],
        temperature: req.temperature,
        max_tokens: req.max_output_tokens,
    })
    .expect("payload serializes")
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_chat_response(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("no choices[0].message.content".into()))
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient { reason: String, hint: Option<Duration> },
    Fatal(GatewayError),
}

/// Calls an OpenAI-compatible endpoint. With a fixture directory set, it
/// runs in record mode: existing fixtures are served without a network
/// call and new responses are written before being returned.
pub struct LiveBackend {
    agent: ureq::Agent,
    config: LiveConfig,
    api_key: Option<String>,
    record_dir: Option<PathBuf>,
    slots: Slots,
    // Shared pause after a rate-limit hint; every request waits it out.
    resume_at: Mutex<Option<Instant>>,
}

impl LiveBackend {
    /// Reads the API key from the configured environment variable. A
    /// missing key only becomes an error when a network call is needed.
    pub fn new(config: LiveConfig, record_dir: Option<PathBuf>) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key, record_dir)
    }

    pub fn with_key(config: LiveConfig, api_key: Option<String>, record_dir: Option<PathBuf>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let slots = Slots { free: Mutex::new(config.max_in_flight.max(1)), cv: Condvar::new() };
        Self { agent, config, api_key, record_dir, slots, resume_at: Mutex::new(None) }
    }

    fn attempt(&self, key: &str, payload: &serde_json::Value) -> Result<String, Failure> {
        let mut resp = match self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", format!("Bearer {key}"))
            .send_json(payload)
        {
            Ok(resp) => resp,
            Err(e) => return Err(Failure::Transient { reason: e.to_string(), hint: None }),
        };
        let status = resp.status().as_u16();
        let hint = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = match resp.body_mut().read_to_string() {
            Ok(body) => body,
            Err(e) => return Err(Failure::Transient { reason: e.to_string(), hint }),
        };
        match status {
            200..=299 => parse_chat_response(&body).map_err(Failure::Fatal),
            401 | 403 => Err(Failure::Fatal(GatewayError::AuthFailure(status))),
            408 | 409 | 429 | 500..=599 => Err(Failure::Transient { reason: format!("HTTP {status}"), hint }),
            _ => Err(Failure::Fatal(GatewayError::Rejected { status, body })),
        }
    }

    fn wait_for_pause(&self) {
        let until = *self.resume_at.lock().unwrap();
        if let Some(until) = until {
            let now = Instant::now();
            if until > now {
                thread::sleep(until - now);
            }
        }
    }

    fn call(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| GatewayError::MissingCredential(self.config.api_key_env.clone()))?;
        let payload = chat_payload(req);
        let policy = &self.config.retry;
        let mut delay = Duration::ZERO;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            self.wait_for_pause();
            let outcome = {
                let _slot = self.slots.acquire();
                self.attempt(key, &payload)
            };
            match outcome {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient { reason, hint }) => {
                    last = reason;
                    if attempt == policy.max_attempts {
                        break;
                    }
                    delay = policy.delay(attempt, delay, hint);
                    if let Some(hint) = hint {
                        let mut resume = self.resume_at.lock().unwrap();
                        let until = Instant::now() + hint.min(Duration::from_millis(policy.max_delay_ms));
                        *resume = Some(resume.map_or(until, |r| r.max(until)));
                    }
                    warn!("{}: attempt {attempt} failed ({last}); retrying in {delay:?}", req.attempt_tag);
                    thread::sleep(delay);
                }
            }
        }
        Err(GatewayError::ExhaustedRetries { attempts: policy.max_attempts.max(1), last })
    }
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.check()?;
        if let Some(dir) = &self.record_dir {
            match read_fixture(dir, &req.attempt_tag) {
                Ok(text) => {
                    debug!("{}: served from {}", req.attempt_tag, dir.display());
                    return Ok(text);
                }
                Err(GatewayError::MissingFixture { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let text = self.call(req)?;
        if let Some(dir) = &self.record_dir {
            record_fixture(dir, &req.attempt_tag, &text, false)?;
        }
        Ok(text)
    }

    fn max_concurrency(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    #[default]
    Replay,
    Scripted,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "scripted" => Ok(Self::Scripted),
            _ => Err(format!("unknown backend `{s}` (expected live, replay or scripted)")),
        }
    }
}

/// Backend selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Replay source, or the record directory for a live backend.
    pub fixture_dir: Option<PathBuf>,
    pub live: LiveConfig,
    /// Responses for the scripted backend, consumed in order.
    pub responses: Vec<String>,
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn CompletionBackend>, GatewayError> {
        Ok(match self.kind {
            BackendKind::Live => Box::new(LiveBackend::new(self.live.clone(), self.fixture_dir.clone())),
            BackendKind::Replay => {
                let dir = self
                    .fixture_dir
                    .clone()
                    .ok_or_else(|| GatewayError::InvalidRequest("replay backend needs fixture_dir".into()))?;
                Box::new(ReplayBackend::new(dir))
            }
            BackendKind::Scripted => Box::new(ScriptedBackend::new(self.responses.clone())),
        })
    }
}
