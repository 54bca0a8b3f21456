//! HTTP routes. Query turns stream their step events as server-sent events.

use std::convert::Infallible;
use std::future::Future;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biosage_core::agents::{AgentVariant, TranslationVariant};
use biosage_core::orchestrator::{ForcedRoute, OrchestratorError, QueryRequest};
use biosage_core::session::{Feedback, Rating, SessionError};
use biosage_core::trace::{Clock, EventKind, EventSink, StepEvent};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::system::{ServerError, System};

pub const DEFAULT_HISTORY_N: usize = 50;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(m) = &self {
            log::error!("{m}");
        }
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownSession(_) | SessionError::UnknownTurn { .. } => ApiError::NotFound(e.to_string()),
            SessionError::InvalidRating(_) => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::UnknownSession(_) => ApiError::NotFound(e.to_string()),
            OrchestratorError::InvalidRequest(_) => ApiError::BadRequest(e.to_string()),
            OrchestratorError::Store(s) => s.into(),
        }
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

async fn blocking<T, E, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, E> + Send + 'static,
    T: Send + 'static,
    E: Into<ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Into::into),
        Err(e) => Err(ApiError::Internal(format!("worker failed: {e}"))),
    }
}

/// Body of `POST /sessions/{id}/query`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBody {
    pub question: String,
    /// `v1` or `v2`; with a translation `route`, `persistent` or `interactive`.
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub mcq: Option<Vec<String>>,
    #[serde(default)]
    pub route: Option<ForcedRoute>,
}

impl QueryBody {
    pub fn into_request(self) -> Result<QueryRequest, ApiError> {
        if self.question.trim().is_empty() {
            return Err(ApiError::BadRequest("question is empty".into()));
        }
        let route = match (self.route, self.variant) {
            (None, None) => None,
            (None, Some(v)) => Some(ForcedRoute::Retrieval { variant: v.parse::<AgentVariant>().map_err(ApiError::BadRequest)? }),
            (Some(ForcedRoute::Translation { in_tags, out_tags, variant }), Some(v)) => {
                let parsed = v.parse::<TranslationVariant>().map_err(ApiError::BadRequest)?;
                if variant.is_some_and(|x| x != parsed) {
                    return Err(ApiError::BadRequest("variant conflicts with route.variant".into()));
                }
                Some(ForcedRoute::Translation { in_tags, out_tags, variant: Some(parsed) })
            }
            (Some(ForcedRoute::Retrieval { variant }), Some(v)) => {
                if v.parse::<AgentVariant>().map_err(ApiError::BadRequest)? != variant {
                    return Err(ApiError::BadRequest("variant conflicts with route.variant".into()));
                }
                Some(ForcedRoute::Retrieval { variant })
            }
            (Some(r), None) => Some(r),
        };
        let mut request = QueryRequest::new(self.question).with_choices(self.mcq.unwrap_or_default());
        request.route = route;
        Ok(request)
    }
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    session_id: String,
    turn_index: u64,
    rating: String,
    #[serde(default)]
    comment: Option<String>,
}

#[derive(Debug, Deserialize)]
struct HistoryParams {
    n: Option<usize>,
}

/// One SSE frame: `event: <kind>\ndata: <StepEvent JSON>\n\n`.
pub fn sse_frame(event: &StepEvent) -> String {
    let data = serde_json::to_string(event).unwrap_or_else(|_| "null".into());
    format!("event: {}\ndata: {data}\n\n", event.kind)
}

type AppState = Arc<System>;

async fn create_session(State(sys): State<AppState>) -> Result<Response, ApiError> {
    let store = sys.store().clone();
    let id = blocking(move || store.create_session()).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn query(State(sys): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let request = parse_body::<QueryBody>(&body)?.into_request()?;
    if !sys.store().exists(&id) {
        return Err(ApiError::NotFound(format!("unknown session {id:?}")));
    }
    let (tx, rx) = mpsc::unbounded_channel::<StepEvent>();
    let delivered = Arc::new(AtomicU64::new(0));
    let terminated = Arc::new(AtomicBool::new(false));
    let sink: EventSink = {
        let (tx, delivered, terminated) = (tx.clone(), delivered.clone(), terminated.clone());
        Box::new(move |e: &StepEvent| {
            delivered.fetch_add(1, Ordering::SeqCst);
            if e.kind.is_terminal() {
                terminated.store(true, Ordering::SeqCst);
            }
            let _ = tx.send(e.clone());
        })
    };
    let orch = sys.orchestrator().clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = orch.handle_query(&id, &request, Some(sink)) {
            log::error!("query on session {id} failed: {e}");
            // Failures before the first event still end the stream properly.
            if !terminated.load(Ordering::SeqCst) {
                let _ = tx.send(StepEvent {
                    seq: delivered.load(Ordering::SeqCst),
                    kind: EventKind::Final,
                    payload: json!({ "kind": "error", "error": e.to_string() }),
                    timestamp_ms: Clock::System.now_ms(),
                });
            }
        }
    });
    let stream = futures::stream::unfold((rx, false), |(mut rx, done)| async move {
        if done {
            return None;
        }
        let event = rx.recv().await?;
        let frame = Bytes::from(sse_frame(&event));
        Some((Ok::<_, Infallible>(frame), (rx, event.kind.is_terminal())))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(stream))
        .map_err(|e| ApiError::Internal(e.to_string()))
}

async fn history(
    State(sys): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HistoryParams>,
) -> Result<Response, ApiError> {
    let store = sys.store().clone();
    let n = params.n.unwrap_or(DEFAULT_HISTORY_N);
    let turns = blocking(move || store.history(&id, n)).await?;
    Ok(Json(turns).into_response())
}

async fn trace(State(sys): State<AppState>, Path((id, turn)): Path<(String, u64)>) -> Result<Response, ApiError> {
    let store = sys.store().clone();
    let events = blocking(move || store.trace(&id, turn)).await?;
    Ok(Json(events).into_response())
}

async fn feedback(State(sys): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let body: FeedbackBody = parse_body(&body)?;
    let rating: Rating = body.rating.parse()?;
    let store = sys.store().clone();
    let fb = Feedback {
        session_id: body.session_id,
        turn_index: body.turn_index,
        rating,
        comment: body.comment,
        created_at_ms: 0,
    };
    blocking(move || store.record_feedback(fb)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn ingest(State(sys): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
    let report = blocking(move || sys.ingest_jsonl(&text)).await?;
    Ok(Json(report).into_response())
}

async fn document(State(sys): State<AppState>, Path(doc_id): Path<String>) -> Result<Response, ApiError> {
    let doc = sys.document(&doc_id).ok_or_else(|| ApiError::NotFound(format!("unknown document {doc_id:?}")))?;
    Ok(Json(json!({
        "doc_id": doc.doc_id,
        "title": doc.title,
        "domain_tags": doc.domain_tags,
        "source_meta": doc.source_meta,
    }))
    .into_response())
}

async fn healthz(State(sys): State<AppState>) -> Result<Response, ApiError> {
    // HTTP backends are probed with blocking requests.
    let report = blocking(move || Ok::<_, ApiError>(sys.health())).await?;
    Ok(Json(report).into_response())
}

fn cors(origins: &[String]) -> Result<Option<CorsLayer>, ServerError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ServerError::Config(format!("bad CORS origin {o:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(values)
    };
    Ok(Some(CorsLayer::new().allow_origin(allow).allow_methods([Method::GET, Method::POST]).allow_headers(Any)))
}

pub fn router(system: Arc<System>, cors_origins: &[String]) -> Result<Router, ServerError> {
    let app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/traces/{turn}", get(trace))
        .route("/feedback", post(feedback))
        .route("/corpus/documents", post(ingest))
        .route("/corpus/documents/{doc_id}", get(document))
        .route("/healthz", get(healthz))
        .with_state(system);
    Ok(match cors(cors_origins)? {
        Some(layer) => app.layer(layer),
        None => app,
    })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
