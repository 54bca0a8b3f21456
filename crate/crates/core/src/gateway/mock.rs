//! Scripted backends for tests and offline runs.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatMessage, ChatRequest, GatewayError, Health, TransportError};

/// Hex SHA-256 of a rendered prompt, used as a script key.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// One line of a mock script:
/// `{"match": {"template": "...", "prompt_hash": "..."|null, "contains": "..."}, "reply": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleMatch {
    /// `None` or `"*"` matches any template.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub prompt_hash: Option<String>,
    /// Substring of the final user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl ScriptRule {
    pub fn new(template: &str, reply: impl Into<String>) -> Self {
        ScriptRule {
            matcher: RuleMatch { template: Some(template.to_owned()), ..RuleMatch::default() },
            reply: reply.into(),
        }
    }

    pub fn for_prompt(template: &str, prompt: &str, reply: impl Into<String>) -> Self {
        let mut rule = ScriptRule::new(template, reply);
        rule.matcher.prompt_hash = Some(prompt_hash(prompt));
        rule
    }

    pub fn containing(template: &str, needle: &str, reply: impl Into<String>) -> Self {
        let mut rule = ScriptRule::new(template, reply);
        rule.matcher.contains = Some(needle.to_owned());
        rule
    }

    /// 0 when the rule does not apply; otherwise higher is more specific.
    fn specificity(&self, template: Option<&str>, prompt: &str, hash: &str) -> u8 {
        let m = &self.matcher;
        let template_ok = match m.template.as_deref() {
            None | Some("*") => true,
            Some(t) => template == Some(t),
        };
        if !template_ok {
            return 0;
        }
        let mut score = 1;
        if let Some(h) = &m.prompt_hash {
            if h != hash {
                return 0;
            }
            score += 4;
        }
        if let Some(needle) = &m.contains {
            if !prompt.contains(needle.as_str()) {
                return 0;
            }
            score += 2;
        }
        if m.template.as_deref().is_some_and(|t| t != "*") {
            score += 1;
        }
        score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub template: Option<String>,
    pub messages: Vec<ChatMessage>,
}

/// Computes a reply from the request, or `None` to fall through to rules.
pub type Responder = dyn Fn(&ChatRequest) -> Option<Result<String, TransportError>> + Send + Sync;

/// Deterministic backend that answers from script rules. The most specific
/// matching rule wins (prompt hash, then substring, then template only);
/// ties go to the rule added last. Every call is recorded.
pub struct MockBackend {
    name: String,
    rules: Vec<ScriptRule>,
    default_reply: String,
    responder: Option<Box<Responder>>,
    health: Health,
    calls: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    pub fn new(name: &str) -> Self {
        MockBackend {
            name: name.to_owned(),
            rules: Vec::new(),
            default_reply: String::new(),
            responder: None,
            health: Health::Ok,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_script_file(name: &str, path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut mock = MockBackend::new(name);
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line)
                .map_err(|e| GatewayError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            mock.rules.push(rule);
        }
        Ok(mock)
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = ScriptRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn with_default_reply(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = reply.into();
        self
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Option<Result<String, TransportError>> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_health(mut self, health: Health) -> Self {
        self.health = health;
        self
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().len()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().clear();
    }

    fn lookup(&self, request: &ChatRequest) -> String {
        let prompt = request.prompt();
        let hash = prompt_hash(prompt);
        let template = request.template.as_deref();
        let mut best: Option<(u8, &ScriptRule)> = None;
        for rule in &self.rules {
            let s = rule.specificity(template, prompt, &hash);
            if s > 0 && best.is_none_or(|(b, _)| s >= b) {
                best = Some((s, rule));
            }
        }
        best.map_or_else(|| self.default_reply.clone(), |(_, r)| r.reply.clone())
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.lock().push(RecordedCall {
            template: request.template.clone(),
            messages: request.messages.clone(),
        });
        if let Some(reply) = self.responder.as_ref().and_then(|f| f(request)) {
            return reply;
        }
        Ok(self.lookup(request))
    }

    fn health(&self) -> Health {
        self.health
    }
}

/// Plays back a fixed sequence of outcomes, then repeats a fallback.
pub struct ScriptedFaults {
    name: String,
    outcomes: Mutex<VecDeque<Result<String, TransportError>>>,
    fallback: Result<String, TransportError>,
    calls: AtomicUsize,
}

impl ScriptedFaults {
    pub fn new(name: &str, outcomes: Vec<Result<String, TransportError>>) -> Self {
        ScriptedFaults {
            name: name.to_owned(),
            outcomes: Mutex::new(outcomes.into()),
            fallback: Err(TransportError::Connect("script exhausted".into())),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn failing(name: &str, err: TransportError) -> Self {
        let mut faults = ScriptedFaults::new(name, Vec::new());
        faults.fallback = Err(err);
        faults
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedFaults {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.outcomes.lock().pop_front().unwrap_or_else(|| self.fallback.clone())
    }

    fn health(&self) -> Health {
        Health::Degraded
    }
}
