//! Chat-completion and embedding clients.
//!
//! [`Gateway`] wraps one [`ChatBackend`] with message validation, bounded
//! retries with exponential backoff, an in-flight request cap, and JSON
//! reply extraction. Backends only perform single attempts.

mod embed;
mod http;
mod json;
mod mock;

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use embed::{Embedder, EmbedderSpec, HashEmbedder, HttpEmbedder};
pub use http::HttpChatBackend;
pub use json::extract_json_object;
pub use mock::{prompt_hash, MockBackend, RecordedCall, Responder, ScriptRule, ScriptedFaults};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.0, max_tokens: 1024, seed: None }
    }
}

/// One attempt's worth of request, as seen by a backend. `template` is a
/// routing hint for scripted backends and never goes over the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template: Option<String>,
    pub messages: Vec<ChatMessage>,
    pub params: DecodeParams,
}

impl ChatRequest {
    /// Content of the final user message, i.e. the rendered prompt.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status { code: u16, body: String },
    Connect(String),
    Timeout,
    Malformed(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code >= 500 || *code == 429,
            TransportError::Connect(_) => true,
            TransportError::Timeout | TransportError::Malformed(_) => false,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Connect(e) => write!(f, "transport: {e}"),
            TransportError::Timeout => f.write_str("timed out"),
            TransportError::Malformed(e) => write!(f, "malformed reply: {e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Ok,
    Degraded,
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Performs exactly one request attempt.
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;

    fn health(&self) -> Health {
        Health::Ok
    }
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("invalid message list: {0}")]
    InvalidMessages(String),
    #[error("backend request timed out")]
    Timeout,
    #[error("backend rejected credentials: {0}")]
    AuthFailure(String),
    #[error("backend rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    BudgetExhausted { attempts: u32, last: String },
    #[error("malformed backend reply: {0}")]
    MalformedBackendReply(String),
    #[error("could not extract a JSON object ({reason})")]
    JsonIrrecoverable { raw: String, reason: String },
    #[error("cannot embed an empty text")]
    EmptyText,
    #[error("embedding dimension changed from {expected} to {got}")]
    DimDrift { expected: usize, got: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Connection settings for one chat backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    /// Chat-completions URL, `mock` for an empty scripted backend, or
    /// `mock:<script.jsonl>`.
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_retry_budget() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

impl BackendProfile {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendProfile {
            name: name.into(),
            endpoint: endpoint.into(),
            model: None,
            auth_env: None,
            timeout_secs: default_timeout_secs(),
            retry_budget: default_retry_budget(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn load_all(path: &Path) -> Result<Vec<BackendProfile>, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>, GatewayError> {
        if self.endpoint == "mock" {
            return Ok(Arc::new(MockBackend::new(&self.name)));
        }
        if let Some(script) = self.endpoint.strip_prefix("mock:") {
            return Ok(Arc::new(MockBackend::from_script_file(&self.name, Path::new(script))?));
        }
        Ok(Arc::new(HttpChatBackend::new(self.clone())))
    }
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock();
        while *available == 0 {
            self.freed.wait(&mut available);
        }
        *available -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    retry_budget: u32,
    backoff_base: Duration,
    slots: Semaphore,
    attempts: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("retry_budget", &self.retry_budget)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            retry_budget: default_retry_budget(),
            backoff_base: Duration::from_millis(250),
            slots: Semaphore::new(default_max_in_flight()),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn from_profile(profile: &BackendProfile) -> Result<Self, GatewayError> {
        Ok(Gateway::new(profile.build_backend()?)
            .with_retry_budget(profile.retry_budget)
            .with_max_in_flight(profile.max_in_flight))
    }

    pub fn with_retry_budget(mut self, budget: u32) -> Self {
        self.retry_budget = budget;
        self
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.slots = Semaphore::new(cap);
        self
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Total backend attempts made through this gateway, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn complete_chat(
        &self,
        template: Option<&str>,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<String, GatewayError> {
        validate_messages(messages)?;
        let request = ChatRequest {
            template: template.map(str::to_owned),
            messages: messages.to_vec(),
            params: params.clone(),
        };
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let outcome = {
                let _permit = self.slots.acquire();
                self.backend.send(&request)
            };
            let err = match outcome {
                Ok(text) => {
                    log::debug!("{}: attempt {attempt} ok", self.backend.name());
                    return Ok(text);
                }
                Err(e) => e,
            };
            log::info!("{}: attempt {attempt} failed: {err}", self.backend.name());
            if !err.is_transient() {
                return Err(match err {
                    TransportError::Timeout => GatewayError::Timeout,
                    TransportError::Status { code: 401 | 403, body } => GatewayError::AuthFailure(body),
                    TransportError::Status { code, body } => GatewayError::Rejected { status: code, body },
                    TransportError::Malformed(m) => GatewayError::MalformedBackendReply(m),
                    TransportError::Connect(m) => GatewayError::MalformedBackendReply(m),
                });
            }
            if attempt > self.retry_budget {
                return Err(GatewayError::BudgetExhausted { attempts: attempt, last: err.to_string() });
            }
            let delay = self.backoff_base.saturating_mul(1 << (attempt - 1).min(10));
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
    }

    /// Like [`complete_chat`](Self::complete_chat) but extracts a JSON
    /// object from the reply, with one repair round-trip on failure.
    pub fn complete_json(
        &self,
        template: Option<&str>,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Map<String, Value>, GatewayError> {
        let raw = self.complete_chat(template, messages, params)?;
        let reason = match extract_json_object(&raw) {
            Ok(obj) => return Ok(obj),
            Err(reason) => reason,
        };
        log::info!("{}: JSON extraction failed ({reason}); requesting repair", self.backend.name());
        let mut repair = messages.to_vec();
        repair.push(ChatMessage::assistant(if raw.trim().is_empty() { "(empty)".to_owned() } else { raw }));
        repair.push(ChatMessage::user(format!(
            "Your previous reply could not be parsed as JSON: {reason}. Reply again with only the JSON object."
        )));
        let raw = self.complete_chat(template, &repair, params)?;
        extract_json_object(&raw).map_err(|reason| GatewayError::JsonIrrecoverable { raw, reason })
    }

    pub fn health(&self) -> Health {
        self.backend.health()
    }
}

fn validate_messages(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::InvalidMessages("no messages".into()));
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
        return Err(GatewayError::InvalidMessages(format!("message {i} is empty")));
    }
    if messages.iter().skip(1).any(|m| m.role == Role::System) {
        return Err(GatewayError::InvalidMessages("system message must come first".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gateway(backend: Arc<dyn ChatBackend>, budget: u32) -> Gateway {
        Gateway::new(backend).with_retry_budget(budget).with_backoff(Duration::ZERO)
    }

    fn ask() -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::user("hi")]
    }

    fn status(code: u16) -> TransportError {
        TransportError::Status { code, body: "boom".into() }
    }

    #[test]
    fn mock_echo() {
        let gw = gateway(Arc::new(MockBackend::new("m").with_default_reply("hello")), 3);
        assert_eq!(gw.complete_chat(None, &ask(), &DecodeParams::default()).unwrap(), "hello");
    }

    #[test]
    fn retries_transient_failures() {
        let faults = Arc::new(ScriptedFaults::new("f", vec![Err(status(500)), Err(status(500)), Ok("ok".into())]));
        let gw = gateway(faults.clone(), 3);
        assert_eq!(gw.complete_chat(None, &ask(), &DecodeParams::default()).unwrap(), "ok");
        assert_eq!(faults.calls(), 3);
        assert_eq!(gw.attempts(), 3);
    }

    #[test]
    fn zero_budget_exhausts() {
        let gw = gateway(Arc::new(ScriptedFaults::failing("f", status(503))), 0);
        match gw.complete_chat(None, &ask(), &DecodeParams::default()) {
            Err(GatewayError::BudgetExhausted { attempts: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auth_and_timeout_are_not_retried() {
        let faults = Arc::new(ScriptedFaults::failing("f", status(401)));
        let gw = gateway(faults.clone(), 3);
        assert!(matches!(gw.complete_chat(None, &ask(), &DecodeParams::default()), Err(GatewayError::AuthFailure(_))));
        assert_eq!(faults.calls(), 1);
        let gw = gateway(Arc::new(ScriptedFaults::failing("f", TransportError::Timeout)), 3);
        assert!(matches!(gw.complete_chat(None, &ask(), &DecodeParams::default()), Err(GatewayError::Timeout)));
    }

    #[test]
    fn message_validation() {
        let gw = gateway(Arc::new(MockBackend::new("m")), 0);
        let p = DecodeParams::default();
        assert!(gw.complete_chat(None, &[], &p).is_err());
        assert!(gw.complete_chat(None, &[ChatMessage::user("")], &p).is_err());
        let two_systems = [ChatMessage::system("a"), ChatMessage::system("b"), ChatMessage::user("q")];
        assert!(gw.complete_chat(None, &two_systems, &p).is_err());
    }

    #[test]
    fn json_direct_and_fenced() {
        let direct = r#"{"answer":"B","explanation":"because"}"#;
        let gw = gateway(Arc::new(MockBackend::new("m").with_default_reply(direct)), 0);
        let obj = gw.complete_json(None, &ask(), &DecodeParams::default()).unwrap();
        assert_eq!(obj["answer"], "B");

        let fenced = "```json\n{\"tags\":[\"biology\"]}\n```";
        let gw = gateway(Arc::new(MockBackend::new("m").with_default_reply(fenced)), 0);
        let obj = gw.complete_json(None, &ask(), &DecodeParams::default()).unwrap();
        assert_eq!(Value::Object(obj), serde_json::json!({"tags": ["biology"]}));
    }

    #[test]
    fn json_repair_roundtrip() {
        let mock = Arc::new(MockBackend::new("m").with_responder(|req: &ChatRequest| {
            Some(Ok(if req.prompt().contains("could not be parsed") { r#"{"ok":true}"# } else { "nope" }.to_owned()))
        }));
        let gw = gateway(mock.clone(), 0);
        let obj = gw.complete_json(None, &ask(), &DecodeParams::default()).unwrap();
        assert_eq!(obj["ok"], true);
        let calls = mock.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].messages.len(), 4);
    }

    #[test]
    fn json_irrecoverable_carries_raw() {
        let gw = gateway(Arc::new(MockBackend::new("m").with_default_reply("no json here")), 0);
        match gw.complete_json(None, &ask(), &DecodeParams::default()) {
            Err(GatewayError::JsonIrrecoverable { raw, .. }) => assert_eq!(raw, "no json here"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn in_flight_cap_bounds_concurrency() {
        use std::sync::atomic::AtomicUsize;
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (l, p) = (live.clone(), peak.clone());
        let mock = MockBackend::new("m").with_responder(move |_| {
            let now = l.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            l.fetch_sub(1, Ordering::SeqCst);
            Some(Ok("x".into()))
        });
        let gw = Arc::new(gateway(Arc::new(mock), 0).with_max_in_flight(2));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let gw = gw.clone();
                std::thread::spawn(move || gw.complete_chat(None, &ask(), &DecodeParams::default()).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn profiles_parse_with_defaults() {
        let profiles: Vec<BackendProfile> =
            serde_json::from_str(r#"[{"name":"gpt-4o","endpoint":"https://example.invalid/v1/chat/completions","auth_env":"OPENAI_API_KEY"}]"#).unwrap();
        assert_eq!(profiles[0].retry_budget, 3);
        assert_eq!(profiles[0].max_in_flight, 4);
    }
}
