//! OpenAI-compatible chat-completions backend over blocking HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendProfile, ChatBackend, ChatRequest, Health, TransportError};

pub struct HttpChatBackend {
    profile: BackendProfile,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(profile: BackendProfile) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(profile.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpChatBackend { profile, agent }
    }

    fn token(&self) -> Option<String> {
        self.profile.auth_env.as_deref().and_then(|var| std::env::var(var).ok())
    }
}

pub(super) fn map_ureq(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(code) => TransportError::Status { code, body: String::new() },
        other => TransportError::Connect(other.to_string()),
    }
}

/// POSTs `body` as JSON and returns the parsed JSON reply of a 2xx response.
pub(super) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &Value,
) -> Result<Value, TransportError> {
    let mut req = agent.post(url);
    if let Some(token) = token {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(map_ureq)?;
    let code = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(map_ureq)?;
    if !(200..300).contains(&code) {
        return Err(TransportError::Status { code, body: text });
    }
    serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut body = json!({
            "model": self.profile.model.as_deref().unwrap_or(&self.profile.name),
            "messages": request.messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        let reply = post_json(&self.agent, &self.profile.endpoint, self.token().as_deref(), &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
    }

    /// Reachability only: any HTTP response counts as healthy.
    fn health(&self) -> Health {
        let probe = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(2)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        match probe.get(&self.profile.endpoint).call() {
            Ok(_) => Health::Ok,
            Err(_) => Health::Degraded,
        }
    }
}
