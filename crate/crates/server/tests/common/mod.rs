//! Fixtures shared by the server integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use biosage::{System, SystemConfig};
use biosage_core::corpus::{Corpus, Document};
use biosage_core::gateway::{Gateway, MockBackend, ScriptRule};
use biosage_core::orchestrator::{CLASSIFIER_TEMPLATE, ROUTER_TEMPLATE};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const SYNTH: &str = r#"{"answer": "B", "explanation": "Both experts agree."}"#;

pub fn scripted() -> MockBackend {
    MockBackend::new("scripted")
        .with_rule(ScriptRule::new(CLASSIFIER_TEMPLATE, "no"))
        .with_rule(ScriptRule::new(ROUTER_TEMPLATE, r#"{"tool": "retrieval_v1"}"#))
        .with_rule(ScriptRule::new("plan_query_v1", r#"{"tags": ["biology", "medicine"]}"#))
        .with_rule(ScriptRule::new("plan_query_v2", r#"{"keywords": ["CRISPR knockout"]}"#))
        .with_rule(ScriptRule::new("evidence_rag", r#"{"relevant": true, "summary": "Screens find genes."}"#))
        .with_rule(ScriptRule::new("evidentiary_expertise", "Exposition."))
        .with_rule(ScriptRule::new("perspective_synthesis", SYNTH))
        .with_rule(ScriptRule::new("background_expertise", "Background."))
        .with_rule(ScriptRule::new("gap_assessment", "The gap."))
        .with_rule(ScriptRule::new("gap_bridge", "The bridge."))
}

pub fn seed_corpus(dir: &Path) {
    let mut c = Corpus::open(dir).unwrap();
    for doc in [
        Document::new("bio-1", "CRISPR screens", "Pooled CRISPR knockout screens identify essential genes in cancer cell lines.")
            .with_tags(["biology"]),
        Document::new("med-1", "Kinase inhibitors", "Kinase inhibitors block tumor signaling in cancer cell lines.")
            .with_tags(["medicine"]),
        Document::new("cs-1", "Attention", "Transformer attention layers weigh token interactions.")
            .with_tags(["computer-science-and-engineering"]),
    ] {
        c.ingest_document(doc).unwrap();
    }
}

pub fn gateway(mock: Arc<MockBackend>) -> Arc<Gateway> {
    Arc::new(Gateway::new(mock).with_retry_budget(0).with_backoff(Duration::ZERO))
}

pub struct App {
    pub dir: tempfile::TempDir,
    pub system: Arc<System>,
    pub router: Router,
    pub mock: Arc<MockBackend>,
}

pub fn app_with(mock: MockBackend, seed: bool) -> App {
    let dir = tempfile::tempdir().unwrap();
    if seed {
        seed_corpus(dir.path());
    }
    reopen(dir, Arc::new(mock))
}

pub fn app() -> App {
    app_with(scripted(), true)
}

/// A fresh system over an existing directory, as after a restart.
pub fn reopen(dir: tempfile::TempDir, mock: Arc<MockBackend>) -> App {
    let system = Arc::new(System::with_gateways(&SystemConfig::new(dir.path()), vec![gateway(mock.clone())]).unwrap());
    let router = biosage::router(system.clone(), &[]).unwrap();
    App { dir, system, router, mock }
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<String>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = router.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let content_type = res.headers().get("content-type").map(|v| v.to_str().unwrap().to_owned());
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    Reply { status, content_type, body: String::from_utf8(bytes.to_vec()).unwrap() }
}

pub async fn new_session(router: &Router) -> String {
    let r = call(router, "POST", "/sessions", None).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    r.json()["session_id"].as_str().unwrap().to_owned()
}

/// Splits an SSE body into (event name, data JSON) pairs, checking that
/// each frame is exactly `event: <kind>\ndata: <json>`.
pub fn sse_events(body: &str) -> Vec<(String, Value)> {
    assert!(body.is_empty() || body.ends_with("\n\n"), "unterminated frame: {body:?}");
    body.split_terminator("\n\n")
        .map(|frame| {
            let (event, data) = frame.split_once('\n').unwrap_or_else(|| panic!("bad frame {frame:?}"));
            let kind = event.strip_prefix("event: ").unwrap_or_else(|| panic!("bad event line {event:?}"));
            let json = data.strip_prefix("data: ").unwrap_or_else(|| panic!("bad data line {data:?}"));
            assert!(!json.contains('\n'));
            let value: Value = serde_json::from_str(json).unwrap();
            assert_eq!(value["kind"], kind);
            (kind.to_owned(), value)
        })
        .collect()
}

pub async fn ask(router: &Router, session: &str, body: Value) -> Vec<(String, Value)> {
    let r = call(router, "POST", &format!("/sessions/{session}/query"), Some(body.to_string())).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.content_type.as_deref(), Some("text/event-stream"));
    sse_events(&r.body)
}
