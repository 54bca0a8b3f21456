mod common;

use std::fs;
use std::sync::Arc;

use axum::http::StatusCode;
use biosage_core::gateway::{MockBackend, TransportError};
use biosage_core::session::Rating;
use common::*;
use serde_json::json;

fn kinds(events: &[(String, serde_json::Value)]) -> Vec<&str> {
    events.iter().map(|(k, _)| k.as_str()).collect()
}

#[tokio::test]
async fn sessions_are_created_with_distinct_ids() {
    let a = app();
    let s1 = new_session(&a.router).await;
    let s2 = new_session(&a.router).await;
    assert_ne!(s1, s2);
    assert!(a.system.store().exists(&s1));
}

#[tokio::test]
async fn unwritable_store_is_500() {
    let a = app();
    // Runs as root in CI, so block the directory with a file instead of chmod.
    let sessions = a.dir.path().join("sessions");
    fs::remove_dir_all(&sessions).unwrap();
    fs::write(&sessions, "").unwrap();
    let r = call(&a.router, "POST", "/sessions", None).await;
    assert_eq!(r.status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(r.json()["error"].is_string());
}

#[tokio::test]
async fn happy_path_streams_the_orchestrator_sequence() {
    let a = app();
    let s = new_session(&a.router).await;
    let events = ask(&a.router, &s, json!({ "question": "Which genes are essential?" })).await;
    assert_eq!(
        kinds(&events),
        [
            "screened",
            "routed",
            "plan_started",
            "tags_selected",
            "evidence_gathered",
            "evidence_gathered",
            "background_ready",
            "background_ready",
            "synthesis_ready",
            "final"
        ]
    );
    for (i, (_, e)) in events.iter().enumerate() {
        assert_eq!(e["seq"], i as u64);
    }
    let last = &events.last().unwrap().1["payload"];
    assert_eq!(last["kind"], "answer");
    assert_eq!(last["answer"], "B");
    assert_eq!(last["turn_index"], 0);
    // the stream matches the persisted trace
    let r = call(&a.router, "GET", &format!("/sessions/{s}/traces/0"), None).await;
    let trace = r.json();
    assert_eq!(trace.as_array().unwrap().len(), events.len());
    assert_eq!(trace[9], events[9].1);
}

#[tokio::test]
async fn forced_variant_and_choices_reach_the_agent() {
    let a = app();
    let s = new_session(&a.router).await;
    let events = ask(&a.router, &s, json!({ "question": "Which genes?", "variant": "v2", "mcq": ["TP53", "MYC"] })).await;
    assert_eq!(events[1].1["payload"]["target"], "retrieval_v2");
    assert_eq!(events[1].1["payload"]["forced"], true);
    let calls = a.mock.calls();
    assert!(calls.iter().all(|c| c.template.as_deref() != Some("route")));
    assert!(calls.iter().any(|c| c.messages.iter().any(|m| m.content.contains("A) TP53\nB) MYC"))));
}

#[tokio::test]
async fn translation_route_streams_a_translation() {
    let a = app();
    let s = new_session(&a.router).await;
    let body = json!({
        "question": "How do attention layers relate to gene regulation?",
        "variant": "interactive",
        "route": { "tool": "translation", "in": ["biology"], "out": ["computer-science-and-engineering"] }
    });
    let events = ask(&a.router, &s, body).await;
    let last = &events.last().unwrap().1["payload"];
    assert_eq!(last["kind"], "translation");
    assert_eq!(last["variant"], "interactive");
    assert_eq!(last["bridged_answer"], "The bridge.");
}

#[tokio::test]
async fn refused_question_ends_after_refusal() {
    let a = app();
    let s = new_session(&a.router).await;
    a.mock.clear_calls();
    let events = ask(&a.router, &s, json!({ "question": "How can I weaponize a pathogen?" })).await;
    assert_eq!(kinds(&events), ["screened", "refused"]);
    assert_eq!(events[1].1["payload"]["stage"], "rules");
    assert_eq!(a.mock.call_count(), 0);
}

#[tokio::test]
async fn unknown_session_is_404_without_a_stream() {
    let a = app();
    let r = call(&a.router, "POST", "/sessions/nope/query", Some(json!({ "question": "q" }).to_string())).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.content_type.as_deref(), Some("application/json"));
    assert_eq!(a.mock.call_count(), 0);
}

#[tokio::test]
async fn malformed_query_bodies_are_400() {
    let a = app();
    let s = new_session(&a.router).await;
    for body in ["{", r#"{"question": ""}"#, r#"{"question": "q", "variant": "v9"}"#, r#"{"q": 1}"#] {
        let r = call(&a.router, "POST", &format!("/sessions/{s}/query"), Some(body.into())).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
    }
    let bad_tag = json!({ "question": "q", "route": { "tool": "translation", "in": ["biology"], "out": ["astrology"] } });
    let r = call(&a.router, "POST", &format!("/sessions/{s}/query"), Some(bad_tag.to_string())).await;
    // forced routes are validated inside the turn; the stream reports it
    if r.status == StatusCode::OK {
        let events = sse_events(&r.body);
        assert_eq!(kinds(&events), ["final"]);
        assert_eq!(events[0].1["payload"]["kind"], "error");
    } else {
        assert_eq!(r.status, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn agent_failure_ends_with_an_error_event() {
    let mock = scripted().with_responder(|req| {
        (req.template.as_deref() == Some("perspective_synthesis")).then(|| Err(TransportError::Status { code: 500, body: "boom".into() }))
    });
    let a = app_with(mock, true);
    let s = new_session(&a.router).await;
    let events = ask(&a.router, &s, json!({ "question": "Which genes?" })).await;
    let (kind, last) = events.last().unwrap();
    assert_eq!(kind, "final");
    assert_eq!(last["payload"]["kind"], "error");
    assert_eq!(events.iter().filter(|(k, _)| k == "final" || k == "refused").count(), 1);
    let turns = call(&a.router, "GET", &format!("/sessions/{s}/history"), None).await.json();
    assert_eq!(turns[0]["outcome"]["kind"], "error");
}

#[tokio::test]
async fn history_windows() {
    let a = app();
    let s = new_session(&a.router).await;
    let r = call(&a.router, "GET", &format!("/sessions/{s}/history"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!([]));
    for i in 0..3 {
        ask(&a.router, &s, json!({ "question": format!("question {i}") })).await;
    }
    let two = call(&a.router, "GET", &format!("/sessions/{s}/history?n=2"), None).await.json();
    assert_eq!(two.as_array().unwrap().len(), 2);
    assert_eq!(two[0]["question"], "question 1");
    assert_eq!(two[1]["turn_index"], 2);
    let all = call(&a.router, "GET", &format!("/sessions/{s}/history"), None).await.json();
    assert_eq!(all.as_array().unwrap().len(), 3);
    let r = call(&a.router, "GET", "/sessions/missing/history", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn history_default_is_fifty() {
    let a = app();
    let s = new_session(&a.router).await;
    let store = a.system.store();
    for i in 0..55 {
        let outcome = biosage_core::session::TurnOutcome::Error { message: format!("e{i}") };
        store.append_turn(&s, &format!("q{i}"), outcome, None).unwrap();
    }
    let all = call(&a.router, "GET", &format!("/sessions/{s}/history"), None).await.json();
    assert_eq!(all.as_array().unwrap().len(), 50);
    assert_eq!(all[0]["question"], "q5");
}

#[tokio::test]
async fn feedback_statuses() {
    let a = app();
    let s = new_session(&a.router).await;
    ask(&a.router, &s, json!({ "question": "Which genes?" })).await;
    let post = |body: serde_json::Value| {
        let router = a.router.clone();
        async move { call(&router, "POST", "/feedback", Some(body.to_string())).await.status }
    };
    let ok = json!({ "session_id": s, "turn_index": 0, "rating": "up", "comment": "clear" });
    assert_eq!(post(ok).await, StatusCode::NO_CONTENT);
    assert_eq!(post(json!({ "session_id": s, "turn_index": 4, "rating": "up" })).await, StatusCode::NOT_FOUND);
    assert_eq!(post(json!({ "session_id": "nope", "turn_index": 0, "rating": "up" })).await, StatusCode::NOT_FOUND);
    assert_eq!(post(json!({ "session_id": s, "turn_index": 0, "rating": "meh" })).await, StatusCode::BAD_REQUEST);
    assert_eq!(post(json!({ "session_id": s })).await, StatusCode::BAD_REQUEST);
    let stored = a.system.store().feedback(&s).unwrap();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].rating, Rating::Up);
    assert_eq!(stored[0].comment.as_deref(), Some("clear"));
}

fn doc_line(id: &str, body: &str) -> String {
    json!({ "doc_id": id, "title": format!("Title {id}"), "body": body, "domain_tags": ["biology"], "source_meta": {} })
        .to_string()
}

#[tokio::test]
async fn corpus_upload_counts() {
    let a = app_with(scripted(), false);
    let lines = [doc_line("a", "Ribosomes translate mRNA."), doc_line("b", "Mitochondria make ATP."), doc_line("c", "Cells divide.")];
    let r = call(&a.router, "POST", "/corpus/documents", Some(lines.join("\n"))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!((r.json()["ingested"].clone(), r.json()["rejected"].clone()), (json!(3), json!(0)));

    let mixed = [doc_line("d", "Enzymes catalyse reactions."), "{\"doc_id\": 5}".to_owned(), doc_line("e", "Genes encode proteins.")];
    let r = call(&a.router, "POST", "/corpus/documents", Some(mixed.join("\n"))).await;
    assert_eq!((r.json()["ingested"].clone(), r.json()["rejected"].clone()), (json!(2), json!(1)));
    assert_eq!(r.json()["diagnostics"][0]["line"], 2);

    let r = call(&a.router, "POST", "/corpus/documents", Some(String::new())).await;
    assert_eq!(r.json(), json!({ "ingested": 0, "rejected": 0 }));

    let doc = call(&a.router, "GET", "/corpus/documents/d", None).await;
    assert_eq!(doc.json()["title"], "Title d");
    assert_eq!(call(&a.router, "GET", "/corpus/documents/zz", None).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn uploaded_documents_are_cited() {
    let a = app_with(scripted(), false);
    let r = call(&a.router, "POST", "/corpus/documents", Some(doc_line("rib", "Ribosomes translate messenger RNA into protein."))).await;
    assert_eq!(r.json()["ingested"], 1);
    let s = new_session(&a.router).await;
    let events = ask(&a.router, &s, json!({ "question": "What do ribosomes translate?" })).await;
    let last = &events.last().unwrap().1["payload"];
    assert_eq!(last["citations"], json!(["rib"]));
}

#[tokio::test]
async fn health_reports_chunks_and_backends() {
    let empty = app_with(scripted(), false);
    let h = call(&empty.router, "GET", "/healthz", None).await.json();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["corpus_chunks"], 0);
    assert_eq!(h["backends"], json!([{ "name": "scripted", "health": "ok" }]));

    let dir = tempfile::tempdir().unwrap();
    seed_corpus(dir.path());
    let down = Arc::new(MockBackend::new("remote").with_health(biosage_core::gateway::Health::Degraded));
    let system = biosage::System::with_gateways(
        &biosage::SystemConfig::new(dir.path()),
        vec![gateway(Arc::new(scripted())), gateway(down)],
    )
    .unwrap();
    let router = biosage::router(Arc::new(system), &[]).unwrap();
    let h = call(&router, "GET", "/healthz", None).await.json();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["corpus_chunks"], 3);
    assert_eq!(h["backends"][1], json!({ "name": "remote", "health": "degraded" }));
}

#[tokio::test]
async fn restart_preserves_sessions_and_history() {
    let a = app();
    let s = new_session(&a.router).await;
    ask(&a.router, &s, json!({ "question": "Which genes?" })).await;
    let before = call(&a.router, "GET", &format!("/sessions/{s}/history"), None).await.json();
    let App { dir, mock, .. } = a;
    let b = reopen(dir, mock);
    let after = call(&b.router, "GET", &format!("/sessions/{s}/history"), None).await.json();
    assert_eq!(before, after);
    let events = ask(&b.router, &s, json!({ "question": "And in mice?" })).await;
    assert_eq!(events.last().unwrap().1["payload"]["turn_index"], 1);
}

#[tokio::test]
async fn concurrent_queries_on_one_session_are_serialized() {
    let a = app();
    let s = new_session(&a.router).await;
    let mut handles = Vec::new();
    for i in 0..4 {
        let router = a.router.clone();
        let s = s.clone();
        handles.push(tokio::spawn(async move { ask(&router, &s, json!({ "question": format!("q{i}") })).await }));
    }
    let mut indices = Vec::new();
    for h in handles {
        let events = h.await.unwrap();
        assert_eq!(events.iter().filter(|(k, _)| k == "final").count(), 1);
        indices.push(events.last().unwrap().1["payload"]["turn_index"].as_u64().unwrap());
    }
    indices.sort();
    assert_eq!(indices, [0, 1, 2, 3]);
}

#[tokio::test]
async fn cors_headers_follow_configuration() {
    let a = app();
    let router = biosage::router(a.system.clone(), &["http://localhost:5173".to_owned()]).unwrap();
    let req = axum::http::Request::builder()
        .uri("/healthz")
        .header("origin", "http://localhost:5173")
        .body(axum::body::Body::empty())
        .unwrap();
    use tower::ServiceExt;
    let res = router.oneshot(req).await.unwrap();
    assert_eq!(res.headers().get("access-control-allow-origin").unwrap(), "http://localhost:5173");
    assert!(biosage::router(a.system.clone(), &["bad\norigin".to_owned()]).is_err());
}

async fn raw_request(addr: std::net::SocketAddr, request: String) -> String {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream.write_all(request.as_bytes()).await.unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    out
}

#[tokio::test]
async fn serves_over_tcp_and_drains_on_shutdown() {
    let a = app();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(biosage::serve(listener, a.router.clone(), async {
        let _ = rx.await;
    }));

    let health = raw_request(addr, "GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n".into()).await;
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"corpus_chunks\":3"));

    let s = new_session(&a.router).await;
    let body = json!({ "question": "Which genes?" }).to_string();
    let req = format!(
        "POST /sessions/{s}/query HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    // shut down only once the response has started, so the stream must be drained
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut head = [0u8; 15];
    stream.read_exact(&mut head).await.unwrap();
    assert_eq!(&head, b"HTTP/1.1 200 OK");
    tx.send(()).unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).await.unwrap();
    assert!(reply.contains("text/event-stream"), "{reply}");
    assert!(reply.contains("event: final"));
    server.await.unwrap().unwrap();
}
