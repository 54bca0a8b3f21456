//! Running one ablation condition over benchmark items.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::bench::{BenchmarkItem, MAX_CHOICES};
use super::extract::extract_choice;
use super::EvalError;
use crate::agents::{choice_letter, AgentConfig, AgentRequest, AgentVariant, RetrievalAgent};
use crate::gateway::{ChatMessage, DecodeParams};
use crate::trace::{Clock, StepEvent, Tracer};

pub const MCQ_DIRECT_TEMPLATE: &str = "mcq_direct";
pub const MCQ_RAG_TEMPLATE: &str = "mcq_rag";
pub const UNSURE_CHOICE: &str = "Insufficient information to answer the question";

const MCQ_SYSTEM: &str = "You are an expert scientist answering multiple-choice questions.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    VanillaLlm,
    VanillaRag,
    AgentV1,
    AgentV2,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::VanillaLlm, Condition::VanillaRag, Condition::AgentV1, Condition::AgentV2];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::VanillaLlm => "vanilla_llm",
            Condition::VanillaRag => "vanilla_rag",
            Condition::AgentV1 => "agent_v1",
            Condition::AgentV2 => "agent_v2",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| EvalError::Config(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationConfig {
    pub condition: Condition,
    pub backend: String,
    /// Chunks of context for vanilla_rag.
    pub retrieval_depth: usize,
    pub seed: Option<u64>,
    /// Items run concurrently; the gateway still caps in-flight calls.
    pub concurrency: usize,
}

impl AblationConfig {
    pub fn new(condition: Condition, backend: impl Into<String>) -> Self {
        AblationConfig { condition, backend: backend.into(), retrieval_depth: 5, seed: None, concurrency: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub benchmark: String,
    pub item_id: String,
    pub condition: Condition,
    pub backend: String,
    pub chosen_index: Option<usize>,
    pub correct: bool,
    pub abstained: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
    /// Raw answer text; the causal module derives text metrics from it.
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn options_block(choices: &[String]) -> String {
    let mut out = String::from("Options:");
    for (i, c) in choices.iter().enumerate() {
        out.push('\n');
        out.push(choice_letter(i));
        out.push_str(") ");
        out.push_str(c);
    }
    out
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub struct Evaluator {
    agent: Arc<RetrievalAgent>,
    trace_dir: Option<PathBuf>,
}

impl Evaluator {
    pub fn new(agent: Arc<RetrievalAgent>) -> Self {
        Evaluator { agent, trace_dir: None }
    }

    /// Agent traces are written under `dir/<benchmark>/<condition>/`.
    pub fn with_trace_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.trace_dir = Some(dir.into());
        self
    }

    /// One record per item, in item order. Item failures become abstentions.
    pub fn run_condition(
        &self,
        config: &AblationConfig,
        benchmark: &str,
        items: &[BenchmarkItem],
        limit: Option<usize>,
    ) -> Result<Vec<RunRecord>, EvalError> {
        if config.concurrency == 0 {
            return Err(EvalError::Config("concurrency must be at least 1".into()));
        }
        if config.condition == Condition::VanillaRag && config.retrieval_depth == 0 {
            return Err(EvalError::Config("vanilla_rag needs a retrieval depth of at least 1".into()));
        }
        let items = &items[..limit.unwrap_or(items.len()).min(items.len())];
        let agent = match config.seed {
            Some(seed) => {
                let params = DecodeParams { seed: Some(seed), ..self.agent.config().params.clone() };
                Arc::new((*self.agent).clone().with_config(AgentConfig { params, ..self.agent.config().clone() }))
            }
            None => self.agent.clone(),
        };
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; items.len()]);
        thread::scope(|s| {
            for _ in 0..config.concurrency.min(items.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = items.get(i) else { break };
                    let record = self.run_item(&agent, config, benchmark, item);
                    slots.lock()[i] = Some(record);
                });
            }
        });
        Ok(slots.into_inner().into_iter().flatten().collect())
    }

    fn run_item(&self, agent: &RetrievalAgent, config: &AblationConfig, benchmark: &str, item: &BenchmarkItem) -> RunRecord {
        let mut offered = item.choices.clone();
        let unsure = (item.allows_unsure && offered.len() < MAX_CHOICES).then(|| {
            offered.push(UNSURE_CHOICE.to_owned());
            offered.len() - 1
        });
        let started = Instant::now();
        let mut trace_ref = None;
        let result = match config.condition {
            Condition::VanillaLlm | Condition::VanillaRag => self.ask_direct(agent, config, item, &offered),
            Condition::AgentV1 | Condition::AgentV2 => {
                let variant = if config.condition == Condition::AgentV1 { AgentVariant::V1 } else { AgentVariant::V2 };
                let request = AgentRequest::new(&item.question).with_choices(offered.clone());
                let mut tracer = Tracer::new().with_clock(Clock::Fixed(0));
                let out = agent.answer_question(&request, variant, &mut tracer).map(|a| a.answer).map_err(|e| e.to_string());
                trace_ref = self.save_trace(benchmark, config.condition, &item.item_id, tracer.events());
                out
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let (response, error) = match result {
            Ok(text) => (text, None),
            Err(e) => {
                log::warn!("{benchmark}/{}/{}: {e}", config.condition, item.item_id);
                (String::new(), Some(e))
            }
        };
        let chosen = if error.is_some() { None } else { extract_choice(&response, &offered) };
        let chosen_index = chosen.filter(|&i| Some(i) != unsure);
        RunRecord {
            benchmark: benchmark.to_owned(),
            item_id: item.item_id.clone(),
            condition: config.condition,
            backend: config.backend.clone(),
            chosen_index,
            correct: chosen_index == Some(item.gold_index),
            abstained: chosen_index.is_none(),
            latency_ms,
            trace_ref,
            response,
            error,
        }
    }

    fn ask_direct(
        &self,
        agent: &RetrievalAgent,
        config: &AblationConfig,
        item: &BenchmarkItem,
        offered: &[String],
    ) -> Result<String, String> {
        let frame = format!("Question: {}\n{}\nAnswer with the letter only.", item.question, options_block(offered));
        let (template, body) = if config.condition == Condition::VanillaRag {
            let hits = agent.search(&item.question, None, config.retrieval_depth).map_err(|e| e.to_string())?;
            let chunks: Vec<&str> = hits
                .iter()
                .filter_map(|h| agent.index().chunk(&h.chunk_id))
                .map(|c| c.text.as_str())
                .collect();
            let context = if chunks.is_empty() { "(no results)".to_owned() } else { chunks.join("\n\n") };
            (MCQ_RAG_TEMPLATE, format!("Context:\n{context}\n\n{frame}"))
        } else {
            (MCQ_DIRECT_TEMPLATE, frame)
        };
        let msgs = [ChatMessage::system(MCQ_SYSTEM), ChatMessage::user(body)];
        agent.gateway().complete_chat(Some(template), &msgs, &agent.config().params).map_err(|e| e.to_string())
    }

    fn save_trace(&self, benchmark: &str, condition: Condition, item_id: &str, events: &[StepEvent]) -> Option<String> {
        let dir = self.trace_dir.as_ref()?;
        let rel = Path::new(&file_safe(benchmark)).join(condition.as_str()).join(format!("{}.json", file_safe(item_id)));
        let path = dir.join(&rel);
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(path.parent().unwrap_or(dir))?;
            fs::write(&path, serde_json::to_vec(events).map_err(std::io::Error::other)?)
        };
        match write() {
            Ok(()) => Some(rel.to_string_lossy().into_owned()),
            Err(e) => {
                log::warn!("could not write trace {}: {e}", path.display());
                None
            }
        }
    }
}
