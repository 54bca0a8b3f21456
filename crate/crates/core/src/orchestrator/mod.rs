//! Session-scoped front controller: screen, route, run an agent, persist.

mod router;
mod safety;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use router::{route, RouteDecision, RouteTarget, ToolMenu, ROUTER_TEMPLATE};
pub use safety::{screen, Denylist, SafetyStage, SafetyVerdict, CLASSIFIER_TEMPLATE, UNAVAILABLE};

use crate::agents::{
    AgentRequest, AgentVariant, RetrievalAgent, SynthesizedAnswer, TranslationAgent, TranslationRequest,
    TranslationResult, TranslationVariant,
};
use crate::corpus::DomainTag;
use crate::index::HybridIndex;
use crate::gateway::DecodeParams;
use crate::session::{SessionError, SessionStore, Turn, TurnOutcome};
use crate::trace::{Clock, EventKind, EventSink, StepEvent, Tracer};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(#[from] SessionError),
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub history_window: usize,
    pub default_route: AgentVariant,
    pub menu: ToolMenu,
    pub translation_variant: TranslationVariant,
    pub params: DecodeParams,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            history_window: 10,
            default_route: AgentVariant::V1,
            menu: ToolMenu::default(),
            translation_variant: TranslationVariant::PersistentMemory,
            params: DecodeParams::default(),
        }
    }
}

/// A route chosen by the caller instead of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum ForcedRoute {
    Retrieval { variant: AgentVariant },
    Translation {
        #[serde(rename = "in")]
        in_tags: Vec<DomainTag>,
        #[serde(rename = "out")]
        out_tags: Vec<DomainTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variant: Option<TranslationVariant>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryRequest {
    pub question: String,
    pub route: Option<ForcedRoute>,
    /// Multiple-choice options appended to the question.
    pub choices: Vec<String>,
}

impl QueryRequest {
    pub fn new(question: impl Into<String>) -> Self {
        QueryRequest { question: question.into(), ..QueryRequest::default() }
    }

    pub fn with_route(mut self, route: ForcedRoute) -> Self {
        self.route = Some(route);
        self
    }

    pub fn with_choices(mut self, choices: Vec<String>) -> Self {
        self.choices = choices;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResponse {
    pub turn: Turn,
    pub events: Vec<StepEvent>,
}

/// "Conversation so far:" preamble over prior turns; `None` when empty.
pub fn history_preamble(turns: &[Turn]) -> Option<String> {
    if turns.is_empty() {
        return None;
    }
    let mut out = String::from("Conversation so far:");
    for t in turns {
        out.push_str("\nUser: ");
        out.push_str(&t.question);
        out.push_str("\nAssistant: ");
        out.push_str(&t.outcome.reply_text());
    }
    Some(out)
}

fn answer_payload(turn_index: u64, variant: &str, a: &SynthesizedAnswer) -> Value {
    json!({
        "turn_index": turn_index,
        "kind": "answer",
        "variant": variant,
        "answer": a.answer,
        "explanation": a.explanation,
        "citations": a.citations,
    })
}

fn translation_payload(turn_index: u64, variant: &str, r: &TranslationResult) -> Value {
    json!({
        "turn_index": turn_index,
        "kind": "translation",
        "variant": variant,
        "out_of_domain_answer": r.out_of_domain_answer,
        "in_domain_answer": r.in_domain_answer,
        "knowledge_gap": r.knowledge_gap,
        "bridged_answer": r.bridged_answer,
        "citations": r.citations,
    })
}

/// The agents one turn runs against. Swapped whole when the index changes.
#[derive(Clone)]
struct Agents {
    retrieval: Arc<RetrievalAgent>,
    translation: Arc<TranslationAgent>,
}

pub struct Orchestrator {
    agents: RwLock<Agents>,
    store: Arc<SessionStore>,
    denylist: Denylist,
    config: OrchestratorConfig,
    clock: Clock,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Orchestrator {
    pub fn new(retrieval: Arc<RetrievalAgent>, store: Arc<SessionStore>) -> Self {
        Orchestrator {
            agents: RwLock::new(Agents { translation: Arc::new(TranslationAgent::new(retrieval.clone())), retrieval }),
            store,
            denylist: Denylist::default(),
            config: OrchestratorConfig::default(),
            clock: Clock::System,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_denylist(mut self, denylist: Denylist) -> Self {
        self.denylist = denylist;
        self
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_translation(self, agent: TranslationAgent) -> Self {
        self.agents.write().translation = Arc::new(agent);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> &Arc<SessionStore> {
        &self.store
    }

    pub fn retrieval(&self) -> Arc<RetrievalAgent> {
        self.agents.read().retrieval.clone()
    }

    /// Points both agents at `index`. Turns already running keep the old one.
    pub fn swap_index(&self, index: Arc<HybridIndex>) {
        let mut agents = self.agents.write();
        let retrieval = Arc::new((*agents.retrieval).clone().with_index(index));
        agents.translation = Arc::new(agents.translation.rebind(retrieval.clone()));
        agents.retrieval = retrieval;
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn safety_screen(&self, question: &str) -> SafetyVerdict {
        screen(&self.denylist, self.agents.read().retrieval.gateway(), question)
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_owned()).or_default().clone()
    }

    fn validate_forced(&self, agents: &Agents, forced: &ForcedRoute) -> Result<RouteDecision, OrchestratorError> {
        match forced {
            ForcedRoute::Retrieval { variant } => Ok(RouteDecision { forced: true, ..RouteDecision::retrieval(*variant) }),
            ForcedRoute::Translation { in_tags, out_tags, variant } => {
                let vocab = agents.retrieval.vocabulary();
                if in_tags.is_empty() || out_tags.is_empty() {
                    return Err(OrchestratorError::InvalidRequest("translation needs in and out tags".into()));
                }
                if let Some(t) = in_tags.iter().chain(out_tags).find(|t| !vocab.contains(t)) {
                    return Err(OrchestratorError::InvalidRequest(format!("unknown tag {t}")));
                }
                Ok(RouteDecision {
                    target: RouteTarget::Translation,
                    in_tags: in_tags.clone(),
                    out_tags: out_tags.clone(),
                    translation_variant: *variant,
                    forced: true,
                })
            }
        }
    }

    fn choose_route(&self, agents: &Agents, history: Option<&str>, question: &str, tracer: &mut Tracer) -> RouteDecision {
        let g = agents.retrieval.gateway();
        match route(g, self.config.menu, agents.retrieval.vocabulary(), history, question, &self.config.params) {
            Ok(d) => d,
            Err(reason) => {
                let fallback = RouteDecision::retrieval(self.config.default_route);
                tracer.warn(
                    format!("routing failed ({reason}); using {}", fallback.target),
                    json!({ "stage": "route" }),
                );
                fallback
            }
        }
    }

    fn execute(
        &self,
        agents: &Agents,
        decision: &RouteDecision,
        request: &QueryRequest,
        history: Option<String>,
        tracer: &mut Tracer,
    ) -> TurnOutcome {
        let result = match decision.target {
            RouteTarget::RetrievalV1 | RouteTarget::RetrievalV2 => {
                let variant = if decision.target == RouteTarget::RetrievalV1 { AgentVariant::V1 } else { AgentVariant::V2 };
                let mut req = AgentRequest::new(&request.question).with_choices(request.choices.clone());
                req.history = history;
                agents
                    .retrieval
                    .answer_question(&req, variant, tracer)
                    .map(|answer| TurnOutcome::Answer { variant: variant.as_str().to_owned(), answer })
            }
            RouteTarget::Translation => {
                let variant = decision.translation_variant.unwrap_or(self.config.translation_variant);
                let mut req = TranslationRequest::new(
                    &request.question,
                    decision.in_tags.clone(),
                    decision.out_tags.clone(),
                    variant,
                );
                req.history = history;
                agents
                    .translation
                    .translate(&req, tracer)
                    .map(|result| TurnOutcome::Translation { variant: variant.as_str().to_owned(), result })
            }
        };
        result.unwrap_or_else(|e| {
            log::error!("agent failed: {e}");
            TurnOutcome::Error { message: e.to_string() }
        })
    }

    /// Runs one turn. Events reach `sink` as they happen; the terminal event
    /// is delivered only after the turn and its trace are durable.
    pub fn handle_query(
        &self,
        session_id: &str,
        request: &QueryRequest,
        sink: Option<EventSink>,
    ) -> Result<QueryResponse, OrchestratorError> {
        if request.question.trim().is_empty() {
            return Err(OrchestratorError::InvalidRequest("question is empty".into()));
        }
        if !self.store.exists(session_id) {
            return Err(OrchestratorError::UnknownSession(session_id.to_owned()));
        }
        let agents = self.agents.read().clone();
        let forced = request.route.as_ref().map(|f| self.validate_forced(&agents, f)).transpose()?;

        let lock = self.session_lock(session_id);
        let _guard = lock.lock();
        let mut tracer = Tracer::new().with_clock(self.clock);
        if let Some(sink) = sink {
            tracer = tracer.with_sink(sink);
        }
        let prior = self.store.history(session_id, self.config.history_window)?;
        let turn_index = self.store.turns(session_id)?.len() as u64;
        let history = history_preamble(&prior);

        let verdict = screen(&self.denylist, agents.retrieval.gateway(), &request.question);
        tracer.emit(EventKind::Screened, serde_json::to_value(&verdict).unwrap_or(Value::Null));
        if !verdict.allow {
            let reason = verdict.reason.clone().unwrap_or_default();
            let stage = serde_json::to_value(verdict.stage).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            let payload = json!({ "turn_index": turn_index, "stage": stage, "reason": reason });
            let outcome = TurnOutcome::Refusal { stage, reason };
            return self.finish(session_id, request, outcome, EventKind::Refused, payload, tracer);
        }

        let decision = match forced {
            Some(d) => d,
            None => self.choose_route(&agents, history.as_deref(), &request.question, &mut tracer),
        };
        tracer.emit(EventKind::Routed, serde_json::to_value(&decision).unwrap_or(Value::Null));
        tracer.emit(EventKind::PlanStarted, json!({ "target": decision.target }));

        let outcome = self.execute(&agents, &decision, request, history, &mut tracer);
        let payload = match &outcome {
            TurnOutcome::Answer { variant, answer } => answer_payload(turn_index, variant, answer),
            TurnOutcome::Translation { variant, result } => translation_payload(turn_index, variant, result),
            TurnOutcome::Error { message } => json!({ "turn_index": turn_index, "kind": "error", "error": message }),
            TurnOutcome::Refusal { .. } => unreachable!("refusals return early"),
        };
        self.finish(session_id, request, outcome, EventKind::Final, payload, tracer)
    }

    fn finish(
        &self,
        session_id: &str,
        request: &QueryRequest,
        outcome: TurnOutcome,
        kind: EventKind,
        payload: Value,
        mut tracer: Tracer,
    ) -> Result<QueryResponse, OrchestratorError> {
        let terminal = tracer.record(kind, payload);
        match self.store.append_turn(session_id, &request.question, outcome, Some(tracer.events())) {
            Ok(turn) => {
                tracer.deliver(&terminal);
                Ok(QueryResponse { turn, events: tracer.into_events() })
            }
            Err(e) => {
                // The stream still ends with one terminal event, reporting
                // that nothing was stored.
                let failed = StepEvent {
                    kind: EventKind::Final,
                    payload: json!({ "kind": "error", "error": format!("turn not persisted: {e}") }),
                    ..terminal
                };
                tracer.deliver(&failed);
                Err(e.into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, ScriptRule, ScriptedFaults, TransportError, Gateway};
    use crate::session::{FaultInjector, KillPoint};
    use crate::test_support::{corpus3, embedder, gateway, index_for, vocab};
    use EventKind::*;

    const SYNTH: &str = r#"{"answer": "B", "explanation": "Both experts agree."}"#;

    fn scripted() -> MockBackend {
        MockBackend::new("m")
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

    struct Fixture {
        _dir: tempfile::TempDir,
        orch: Orchestrator,
        mock: Arc<MockBackend>,
        session: String,
    }

    fn fixture_with(mock: MockBackend, faults: Option<Arc<FaultInjector>>) -> Fixture {
        let (gw, mock) = gateway(mock);
        let agent = Arc::new(RetrievalAgent::new(gw, index_for(&corpus3()), vocab()).with_embedder(embedder()));
        let dir = tempfile::tempdir().unwrap();
        let mut store = SessionStore::open(dir.path()).unwrap().with_clock(Clock::Fixed(7));
        if let Some(f) = faults {
            store = store.with_faults(f);
        }
        let store = Arc::new(store);
        let session = store.create_session().unwrap();
        let orch = Orchestrator::new(agent, store).with_clock(Clock::Fixed(7));
        Fixture { _dir: dir, orch, mock, session }
    }

    fn fixture(mock: MockBackend) -> Fixture {
        fixture_with(mock, None)
    }

    fn collecting() -> (EventSink, Arc<Mutex<Vec<StepEvent>>>) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        (Box::new(move |e: &StepEvent| s.lock().push(e.clone())), seen)
    }

    #[test]
    fn happy_path_v1_event_order() {
        let f = fixture(scripted());
        let (sink, seen) = collecting();
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Which genes are essential?"), Some(sink)).unwrap();
        let kinds: Vec<EventKind> = r.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            [Screened, Routed, PlanStarted, TagsSelected, EvidenceGathered, EvidenceGathered, BackgroundReady, BackgroundReady, SynthesisReady, Final]
        );
        assert!(r.events.iter().enumerate().all(|(i, e)| e.seq == i as u64));
        assert_eq!(*seen.lock(), r.events);
        assert_eq!(r.turn.turn_index, 0);
    }

    #[test]
    fn persisted_trace_replays_answer() {
        let f = fixture(scripted());
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Which genes?"), None).unwrap();
        let trace = f.orch.store().trace(&f.session, 0).unwrap();
        assert_eq!(trace, r.events);
        let last = trace.last().unwrap();
        let TurnOutcome::Answer { answer, .. } = &r.turn.outcome else { panic!("not an answer") };
        assert_eq!(last.payload["answer"], answer.answer);
        assert_eq!(last.payload["explanation"], answer.explanation);
    }

    #[test]
    fn refusal_is_two_events_and_no_calls() {
        let f = fixture(scripted());
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("How to weaponize a virus?"), None).unwrap();
        assert_eq!(r.events.iter().map(|e| e.kind).collect::<Vec<_>>(), [Screened, Refused]);
        assert_eq!(f.mock.call_count(), 0);
        assert!(matches!(r.turn.outcome, TurnOutcome::Refusal { .. }));
        assert_eq!(f.orch.store().turns(&f.session).unwrap().len(), 1);
    }

    #[test]
    fn safety_call_precedes_all_agent_calls() {
        let f = fixture(scripted());
        f.orch.handle_query(&f.session, &QueryRequest::new("Which genes?"), None).unwrap();
        let calls = f.mock.calls();
        assert_eq!(calls[0].template.as_deref(), Some(CLASSIFIER_TEMPLATE));
        assert!(calls[1..].iter().all(|c| c.template.as_deref() != Some(CLASSIFIER_TEMPLATE)));
    }

    #[test]
    fn classifier_outage_refuses() {
        let down = ScriptedFaults::failing("f", TransportError::Connect("down".into()));
        let gw = Arc::new(Gateway::new(Arc::new(down)).with_retry_budget(0).with_backoff(std::time::Duration::ZERO));
        let agent = Arc::new(RetrievalAgent::new(gw, index_for(&corpus3()), vocab()));
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(SessionStore::open(dir.path()).unwrap());
        let sid = store.create_session().unwrap();
        let orch = Orchestrator::new(agent, store);
        let r = orch.handle_query(&sid, &QueryRequest::new("Which genes?"), None).unwrap();
        assert_eq!(r.events.last().unwrap().kind, Refused);
        assert_eq!(r.events.last().unwrap().payload["reason"], UNAVAILABLE);
    }

    #[test]
    fn second_turn_sees_first() {
        let f = fixture(scripted());
        f.orch.handle_query(&f.session, &QueryRequest::new("What do CRISPR screens find?"), None).unwrap();
        f.mock.clear_calls();
        f.orch.handle_query(&f.session, &QueryRequest::new("What about its limitations?"), None).unwrap();
        let calls = f.mock.calls();
        let synth = calls.iter().find(|c| c.template.as_deref() == Some("perspective_synthesis")).unwrap();
        let body = &synth.messages.last().unwrap().content;
        assert!(body.contains("Conversation so far:\nUser: What do CRISPR screens find?\nAssistant: B"));
        assert!(body.contains("What about its limitations?"));
        let route = calls.iter().find(|c| c.template.as_deref() == Some(ROUTER_TEMPLATE)).unwrap();
        assert!(route.messages[1].content.contains("User: What do CRISPR screens find?"));
    }

    #[test]
    fn history_window_is_bounded() {
        let f = fixture(scripted());
        let cfg = OrchestratorConfig { history_window: 2, ..OrchestratorConfig::default() };
        let orch = Orchestrator::new(f.orch.retrieval(), f.orch.store().clone()).with_config(cfg);
        for i in 0..4 {
            orch.handle_query(&f.session, &QueryRequest::new(format!("question number {i}")), None).unwrap();
        }
        let route = f.mock.calls().into_iter().rev().find(|c| c.template.as_deref() == Some(ROUTER_TEMPLATE)).unwrap();
        let body = &route.messages[1].content;
        assert!(!body.contains("question number 0"));
        assert!(body.contains("User: question number 1") && body.contains("User: question number 2"));
        assert!(body.ends_with("Question: question number 3"));
    }

    #[test]
    fn unknown_tool_falls_back_with_warning() {
        let f = fixture(scripted().with_rule(ScriptRule::new(ROUTER_TEMPLATE, r#"{"tool": "reasoning"}"#)));
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Which genes?"), None).unwrap();
        assert_eq!(&r.events.iter().map(|e| e.kind).collect::<Vec<_>>()[..3], [Screened, Warning, Routed]);
        assert_eq!(r.events[2].payload["target"], "retrieval_v1");
    }

    #[test]
    fn swapped_index_serves_later_turns() {
        let f = fixture(scripted());
        let mut c = corpus3();
        c.ingest_document(
            crate::corpus::Document::new("bio-2", "Base editing", "Base editors convert single nucleotides in genes.")
                .with_tags(["biology"]),
        )
        .unwrap();
        let before = f.orch.retrieval().index().len();
        f.orch.swap_index(index_for(&c));
        assert!(f.orch.retrieval().index().len() > before);
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Which genes do base editors change?"), None).unwrap();
        let gathered = r.events.iter().find(|e| e.kind == EvidenceGathered).unwrap();
        assert!(gathered.payload.to_string().contains("bio-2"), "{}", gathered.payload);
    }

    #[test]
    fn routed_translation_runs_translator() {
        let reply = r#"{"tool": "translation", "in": "biology", "out": "computer-science-and-engineering"}"#;
        let f = fixture(scripted().with_rule(ScriptRule::new(ROUTER_TEMPLATE, reply)));
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Explain attention to a biologist"), None).unwrap();
        assert!(matches!(r.turn.outcome, TurnOutcome::Translation { .. }));
        let kinds: Vec<EventKind> = r.events.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&GapAssessed) && kinds.contains(&Bridged));
        assert_eq!(r.events.last().unwrap().payload["bridged_answer"], "The bridge.");
    }

    #[test]
    fn forced_route_skips_router() {
        let f = fixture(scripted());
        let req = QueryRequest::new("Which genes?").with_route(ForcedRoute::Retrieval { variant: AgentVariant::V2 });
        let r = f.orch.handle_query(&f.session, &req, None).unwrap();
        assert!(f.mock.calls().iter().all(|c| c.template.as_deref() != Some(ROUTER_TEMPLATE)));
        assert_eq!(r.events[1].payload["forced"], true);
        assert!(r.events.iter().any(|e| e.kind == KeywordsSelected));
        let bad = QueryRequest::new("q").with_route(ForcedRoute::Translation {
            in_tags: vec![DomainTag::new("astrology")],
            out_tags: vec![DomainTag::new("biology")],
            variant: None,
        });
        assert!(matches!(f.orch.handle_query(&f.session, &bad, None), Err(OrchestratorError::InvalidRequest(_))));
    }

    #[test]
    fn agent_error_is_final_event() {
        let f = fixture(scripted().with_rule(ScriptRule::new("perspective_synthesis", "")));
        let r = f.orch.handle_query(&f.session, &QueryRequest::new("Which genes?"), None).unwrap();
        let last = r.events.last().unwrap();
        assert_eq!(last.kind, Final);
        assert_eq!(last.payload["kind"], "error");
        assert!(matches!(r.turn.outcome, TurnOutcome::Error { .. }));
        assert_eq!(r.events.iter().filter(|e| e.kind.is_terminal()).count(), 1);
    }

    #[test]
    fn unknown_session_rejected_before_calls() {
        let f = fixture(scripted());
        assert!(matches!(
            f.orch.handle_query("missing", &QueryRequest::new("q"), None),
            Err(OrchestratorError::UnknownSession(_))
        ));
        assert_eq!(f.mock.call_count(), 0);
    }

    #[test]
    fn persist_failure_still_terminates_stream() {
        let faults = Arc::new(FaultInjector::default());
        let f = fixture_with(scripted(), Some(faults.clone()));
        faults.arm(KillPoint::TraceCommitted);
        let (sink, seen) = collecting();
        assert!(f.orch.handle_query(&f.session, &QueryRequest::new("Which genes?"), Some(sink)).is_err());
        let seen = seen.lock();
        assert_eq!(seen.iter().filter(|e| e.kind.is_terminal()).count(), 1);
        assert_eq!(seen.last().unwrap().payload["kind"], "error");
        assert!(f.orch.store().turns(&f.session).unwrap().is_empty());
    }
}
