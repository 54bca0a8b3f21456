//! Step events emitted while a request is processed.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Screened,
    Routed,
    PlanStarted,
    TagsSelected,
    KeywordsSelected,
    EvidenceGathered,
    BackgroundReady,
    GapAssessed,
    Bridged,
    SynthesisReady,
    Warning,
    Refused,
    Final,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Screened => "screened",
            EventKind::Routed => "routed",
            EventKind::PlanStarted => "plan_started",
            EventKind::TagsSelected => "tags_selected",
            EventKind::KeywordsSelected => "keywords_selected",
            EventKind::EvidenceGathered => "evidence_gathered",
            EventKind::BackgroundReady => "background_ready",
            EventKind::GapAssessed => "gap_assessed",
            EventKind::Bridged => "bridged",
            EventKind::SynthesisReady => "synthesis_ready",
            EventKind::Warning => "warning",
            EventKind::Refused => "refused",
            EventKind::Final => "final",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Final | EventKind::Refused)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub timestamp_ms: u64,
}

pub type EventSink = Box<dyn FnMut(&StepEvent) + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            Clock::Fixed(t) => t,
        }
    }
}

/// Records events with gapless sequence numbers from 0 and forwards each
/// one to an optional sink as it happens.
#[derive(Default)]
pub struct Tracer {
    events: Vec<StepEvent>,
    sink: Option<EventSink>,
    clock: Clock,
}

impl fmt::Debug for Tracer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tracer").field("events", &self.events).field("clock", &self.clock).finish()
    }
}

impl Tracer {
    pub fn new() -> Self {
        Tracer::default()
    }

    pub fn with_sink(mut self, sink: EventSink) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    /// Records an event without delivering it; pair with [`deliver`](Self::deliver).
    pub fn record(&mut self, kind: EventKind, payload: Value) -> StepEvent {
        let event = StepEvent {
            seq: self.events.len() as u64,
            kind,
            payload,
            timestamp_ms: self.clock.now_ms(),
        };
        self.events.push(event.clone());
        event
    }

    pub fn deliver(&mut self, event: &StepEvent) {
        if let Some(sink) = self.sink.as_mut() {
            sink(event);
        }
    }

    pub fn emit(&mut self, kind: EventKind, payload: Value) -> u64 {
        let event = self.record(kind, payload);
        self.deliver(&event);
        event.seq
    }

    pub fn warn(&mut self, message: impl Into<String>, mut details: Value) {
        let message = message.into();
        log::warn!("{message}");
        match details.as_object_mut() {
            Some(obj) => {
                obj.insert("message".into(), Value::String(message));
            }
            None => details = serde_json::json!({ "message": message }),
        }
        self.emit(EventKind::Warning, details);
    }

    pub fn events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn kinds(&self) -> Vec<EventKind> {
        self.events.iter().map(|e| e.kind).collect()
    }

    pub fn into_events(self) -> Vec<StepEvent> {
        self.events
    }
}
