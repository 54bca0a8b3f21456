//! Durable conversation memory: turns, traces and feedback per session.
//!
//! Layout under the store root:
//! `sessions/<id>/turns.jsonl`, `sessions/<id>/feedback.jsonl` and
//! `sessions/<id>/traces/<turn>.json`. Records are single JSONL lines written
//! with one `write` and an fsync. A line without its trailing newline is a
//! torn write: readers skip it and the next append truncates it away.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{SynthesizedAnswer, TranslationResult};
use crate::trace::{Clock, StepEvent};

const SESSIONS: &str = "sessions";
const TURNS: &str = "turns.jsonl";
const FEEDBACK: &str = "feedback.jsonl";
const TRACES: &str = "traces";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {session:?} has no turn {turn}")]
    UnknownTurn { session: String, turn: u64 },
    #[error("invalid rating {0:?} (expected up or down)")]
    InvalidRating(String),
    #[error("injected crash at {0}")]
    InjectedCrash(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnOutcome {
    Answer { variant: String, answer: SynthesizedAnswer },
    Translation { variant: String, result: TranslationResult },
    Refusal { stage: String, reason: String },
    Error { message: String },
}

impl TurnOutcome {
    /// The text a follow-up question should see as the assistant's reply.
    pub fn reply_text(&self) -> String {
        match self {
            TurnOutcome::Answer { answer, .. } => format!("{}\n\n{}", answer.answer, answer.explanation),
            TurnOutcome::Translation { result, .. } => result.bridged_answer.clone(),
            TurnOutcome::Refusal { reason, .. } => format!("(refused: {reason})"),
            TurnOutcome::Error { message } => format!("(error: {message})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub session_id: String,
    pub turn_index: u64,
    pub question: String,
    pub outcome: TurnOutcome,
    /// Path of the trace file relative to the session directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rating {
    Up,
    Down,
}

impl FromStr for Rating {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Rating::Up),
            "down" => Ok(Rating::Down),
            other => Err(SessionError::InvalidRating(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub session_id: String,
    pub turn_index: u64,
    pub rating: Rating,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default)]
    pub created_at_ms: u64,
}

/// Where an injected crash interrupts [`SessionStore::append_turn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillPoint {
    /// Before anything is written.
    BeforeTrace,
    /// Trace temp file written but not renamed.
    TraceTempWritten,
    /// Trace in place, turn line not yet written.
    TraceCommitted,
    /// Only the first `n` bytes of the turn line reach the file.
    TurnBytes(usize),
    /// Whole turn line written, fsync not yet done.
    TurnUnsynced,
}

/// Arms a single kill point; it fires once.
#[derive(Debug, Default)]
pub struct FaultInjector {
    armed: Mutex<Option<KillPoint>>,
}

impl FaultInjector {
    pub fn arm(&self, point: KillPoint) {
        *self.armed.lock() = Some(point);
    }

    fn fire(&self, at: KillPoint) -> Result<(), SessionError> {
        let mut armed = self.armed.lock();
        if *armed == Some(at) {
            *armed = None;
            return Err(SessionError::InjectedCrash(format!("{at:?}")));
        }
        Ok(())
    }

    fn torn_len(&self) -> Option<usize> {
        let mut armed = self.armed.lock();
        match *armed {
            Some(KillPoint::TurnBytes(n)) => {
                *armed = None;
                Some(n)
            }
            _ => None,
        }
    }
}

/// Complete records of a JSONL file and the byte length they occupy.
/// Reading stops at the first torn or unparseable line.
fn read_records<T: DeserializeOwned>(path: &Path) -> io::Result<(Vec<T>, u64)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e),
    };
    let mut records = Vec::new();
    let mut valid = 0usize;
    while let Some(nl) = bytes[valid..].iter().position(|&b| b == b'\n') {
        let line = &bytes[valid..valid + nl];
        match serde_json::from_slice::<T>(line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}: ignoring unreadable record at byte {valid}: {e}", path.display());
                break;
            }
        }
        valid += nl + 1;
    }
    if valid < bytes.len() {
        log::warn!("{}: ignoring {} trailing bytes of a torn record", path.display(), bytes.len() - valid);
    }
    Ok((records, valid as u64))
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

pub struct SessionStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    faults: Option<Arc<FaultInjector>>,
    clock: Clock,
}

impl SessionStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, SessionError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(SESSIONS))?;
        Ok(SessionStore { root, locks: Mutex::new(HashMap::new()), faults: None, clock: Clock::System })
    }

    pub fn with_faults(mut self, faults: Arc<FaultInjector>) -> Self {
        self.faults = Some(faults);
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, SessionError> {
        let valid = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let dir = self.root.join(SESSIONS).join(id);
        if !valid || !dir.join(TURNS).is_file() {
            return Err(SessionError::UnknownSession(id.to_owned()));
        }
        Ok(dir)
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(id.to_owned()).or_default().clone()
    }

    fn fire(&self, at: KillPoint) -> Result<(), SessionError> {
        self.faults.as_ref().map_or(Ok(()), |f| f.fire(at))
    }

    pub fn create_session(&self) -> Result<String, SessionError> {
        let id = uuid::Uuid::new_v4().to_string();
        let sessions = self.root.join(SESSIONS);
        let tmp = sessions.join(format!(".{id}.tmp"));
        fs::create_dir_all(tmp.join(TRACES))?;
        File::create(tmp.join(TURNS))?.sync_all()?;
        sync_dir(&tmp)?;
        fs::rename(&tmp, sessions.join(&id))?;
        sync_dir(&sessions)?;
        Ok(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).is_ok()
    }

    pub fn list_sessions(&self) -> Result<Vec<String>, SessionError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join(SESSIONS))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.starts_with('.') && self.exists(n))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Persists the trace (if any) and then the turn; returns the stored
    /// turn with its assigned index.
    pub fn append_turn(
        &self,
        id: &str,
        question: &str,
        outcome: TurnOutcome,
        trace: Option<&[StepEvent]>,
    ) -> Result<Turn, SessionError> {
        let dir = self.dir(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock();
        let turns_path = dir.join(TURNS);
        let (existing, valid_len) = read_records::<Turn>(&turns_path)?;
        let index = existing.len() as u64;

        self.fire(KillPoint::BeforeTrace)?;
        let trace_ref = match trace {
            Some(events) => {
                let rel = format!("{TRACES}/{index}.json");
                let tmp = dir.join(format!("{TRACES}/{index}.json.tmp"));
                {
                    let mut f = File::create(&tmp)?;
                    serde_json::to_writer(&mut f, events).map_err(io::Error::other)?;
                    f.sync_all()?;
                }
                self.fire(KillPoint::TraceTempWritten)?;
                fs::rename(&tmp, dir.join(&rel))?;
                sync_dir(&dir.join(TRACES))?;
                self.fire(KillPoint::TraceCommitted)?;
                Some(rel)
            }
            None => None,
        };

        let turn = Turn {
            session_id: id.to_owned(),
            turn_index: index,
            question: question.to_owned(),
            outcome,
            trace_ref,
            created_at_ms: self.clock.now_ms(),
        };
        let mut line = serde_json::to_vec(&turn).map_err(io::Error::other)?;
        line.push(b'\n');
        let f = OpenOptions::new().write(true).open(&turns_path)?;
        if f.metadata()?.len() != valid_len {
            log::warn!("{}: truncating torn tail to {valid_len} bytes", turns_path.display());
            f.set_len(valid_len)?;
        }
        let mut f = OpenOptions::new().append(true).open(&turns_path)?;
        if let Some(n) = self.faults.as_ref().and_then(|x| x.torn_len()) {
            f.write_all(&line[..n.min(line.len())])?;
            return Err(SessionError::InjectedCrash(format!("TurnBytes({n})")));
        }
        f.write_all(&line)?;
        self.fire(KillPoint::TurnUnsynced)?;
        f.sync_data()?;
        Ok(turn)
    }

    pub fn turns(&self, id: &str) -> Result<Vec<Turn>, SessionError> {
        let dir = self.dir(id)?;
        Ok(read_records(&dir.join(TURNS))?.0)
    }

    /// The last `min(n, count)` turns in order.
    pub fn history(&self, id: &str, last_n: usize) -> Result<Vec<Turn>, SessionError> {
        let mut turns = self.turns(id)?;
        let skip = turns.len().saturating_sub(last_n);
        Ok(turns.split_off(skip))
    }

    pub fn turn(&self, id: &str, index: u64) -> Result<Turn, SessionError> {
        self.turns(id)?
            .into_iter()
            .nth(index as usize)
            .ok_or_else(|| SessionError::UnknownTurn { session: id.to_owned(), turn: index })
    }

    pub fn trace(&self, id: &str, index: u64) -> Result<Vec<StepEvent>, SessionError> {
        let turn = self.turn(id, index)?;
        let Some(rel) = turn.trace_ref else { return Ok(Vec::new()) };
        let bytes = fs::read(self.dir(id)?.join(rel))?;
        serde_json::from_slice(&bytes).map_err(|e| io::Error::other(e).into())
    }

    /// Appends feedback for an existing turn. Duplicates are kept.
    pub fn record_feedback(&self, mut feedback: Feedback) -> Result<(), SessionError> {
        let dir = self.dir(&feedback.session_id)?;
        self.turn(&feedback.session_id, feedback.turn_index)?;
        if feedback.created_at_ms == 0 {
            feedback.created_at_ms = self.clock.now_ms();
        }
        let lock = self.lock(&feedback.session_id);
        let _guard = lock.lock();
        let path = dir.join(FEEDBACK);
        let (_, valid_len) = read_records::<Feedback>(&path)?;
        let mut line = serde_json::to_vec(&feedback).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        if f.metadata()?.len() != valid_len {
            f.set_len(valid_len)?;
        }
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn feedback(&self, id: &str) -> Result<Vec<Feedback>, SessionError> {
        let dir = self.dir(id)?;
        Ok(read_records(&dir.join(FEEDBACK))?.0)
    }
}
