//! Plan, gather evidence per domain, gather background, synthesize.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{call_json, call_text, irrecoverable, messages, text_of, with_options, AgentError};
use crate::corpus::{DomainTag, TagVocabulary};
use crate::gateway::{DecodeParams, Embedder, Gateway, GatewayError};
use crate::index::{HybridIndex, IndexError, SearchHit};
use crate::prompts::{PromptRegistry, TemplateId};
use crate::trace::{EventKind, Tracer};

/// Pseudo-tag for a corpus-wide gather when planning yields nothing usable.
pub const GENERAL_TAG: &str = "general";
/// Evidence binding used when no retrieved note was relevant.
pub const NO_EVIDENCE: &str = "No direct evidence found.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentVariant {
    #[default]
    V1,
    V2,
}

impl AgentVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentVariant::V1 => "v1",
            AgentVariant::V2 => "v2",
        }
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(AgentVariant::V1),
            "v2" => Ok(AgentVariant::V2),
            other => Err(format!("unknown agent variant {other:?} (expected v1 or v2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Chunks assessed per planned tag (v1).
    pub per_tag_k: usize,
    /// Hits pooled per keyword (v2).
    pub v2_search_depth: usize,
    /// Chunks assessed per tag group (v2).
    pub v2_group_cap: usize,
    pub params: DecodeParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { per_tag_k: 5, v2_search_depth: 20, v2_group_cap: 5, params: DecodeParams::default() }
    }
}

/// A question plus optional conversation preamble and MCQ choices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentRequest {
    pub question: String,
    pub history: Option<String>,
    pub choices: Vec<String>,
}

impl AgentRequest {
    pub fn new(question: impl Into<String>) -> Self {
        AgentRequest { question: question.into(), ..AgentRequest::default() }
    }

    pub fn with_history(mut self, preamble: impl Into<String>) -> Self {
        self.history = Some(preamble.into());
        self
    }

    pub fn with_choices(mut self, choices: Vec<String>) -> Self {
        self.choices = choices;
        self
    }

    /// The text bound into prompts: preamble, question, then options.
    pub fn prompt_text(&self) -> String {
        let q = with_options(&self.question, &self.choices);
        match &self.history {
            Some(h) if !h.is_empty() => format!("{h}\n\n{q}"),
            _ => q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub variant: AgentVariant,
    #[serde(default)]
    pub tags: Vec<DomainTag>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceNote {
    pub chunk_id: String,
    pub doc_id: String,
    pub tag: DomainTag,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertContext {
    pub tag: DomainTag,
    pub exposition: String,
    /// Relevant notes only.
    pub supporting_notes: Vec<EvidenceNote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedAnswer {
    pub answer: String,
    pub explanation: String,
    pub citations: BTreeSet<String>,
}

#[derive(Clone)]
pub struct RetrievalAgent {
    gateway: Arc<Gateway>,
    embedder: Option<Arc<dyn Embedder>>,
    index: Arc<HybridIndex>,
    vocabulary: TagVocabulary,
    prompts: &'static PromptRegistry,
    config: AgentConfig,
}

impl RetrievalAgent {
    pub fn new(gateway: Arc<Gateway>, index: Arc<HybridIndex>, vocabulary: TagVocabulary) -> Self {
        RetrievalAgent {
            gateway,
            embedder: None,
            index,
            vocabulary,
            prompts: PromptRegistry::builtin(),
            config: AgentConfig::default(),
        }
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_config(mut self, config: AgentConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_index(mut self, index: Arc<HybridIndex>) -> Self {
        self.index = index;
        self
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn index(&self) -> &Arc<HybridIndex> {
        &self.index
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub(crate) fn prompts(&self) -> &'static PromptRegistry {
        self.prompts
    }

    /// Hybrid search, term-only when no embedder or no embedded chunks.
    /// A query without searchable terms yields no hits.
    pub fn search(&self, text: &str, filter: Option<&BTreeSet<DomainTag>>, k: usize) -> Result<Vec<SearchHit>, AgentError> {
        let embedding = match (&self.embedder, self.index.embedding_dim()) {
            (Some(e), Some(_)) => match e.embed_one(text) {
                Ok(v) => Some(v),
                Err(GatewayError::EmptyText) => None,
                Err(err) => return Err(err.into()),
            },
            _ => None,
        };
        match self.index.hybrid_search(text, embedding.as_deref(), filter, k) {
            Ok(hits) => Ok(hits),
            Err(IndexError::EmptyQuery) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn plan_query_v1(&self, question: &str, tracer: &mut Tracer) -> Result<QueryPlan, AgentError> {
        if self.vocabulary.is_empty() {
            return Err(AgentError::InvalidRequest("tag vocabulary is empty".into()));
        }
        let names: Vec<&str> = self.vocabulary.tags().iter().map(DomainTag::as_str).collect();
        let category_tags = format!("[{}]", names.join(", "));
        let prompt = self
            .prompts
            .render(TemplateId::PlanQueryV1, &[("category_tags", &category_tags), ("prompt", question)])?;
        let obj = call_json(&self.gateway, TemplateId::PlanQueryV1, &messages(&prompt), &self.config.params)?;
        let list = obj
            .get("tags")
            .or_else(|| obj.get("value"))
            .and_then(Value::as_array)
            .ok_or_else(|| irrecoverable(&obj, "\"tags\" is not a list"))?;
        let mut tags: Vec<DomainTag> = Vec::new();
        for item in list {
            let Some(name) = item.as_str() else {
                tracer.warn("dropped non-string tag", json!({ "tag": item }));
                continue;
            };
            let tag = DomainTag::new(name);
            if !self.vocabulary.contains(&tag) {
                tracer.warn(format!("dropped unknown tag {name:?}"), json!({ "tag": name }));
                continue;
            }
            if !tags.contains(&tag) {
                tags.push(tag);
            }
        }
        if tags.is_empty() {
            return Err(AgentError::EmptyPlan("tags"));
        }
        Ok(QueryPlan { variant: AgentVariant::V1, tags, keywords: Vec::new() })
    }

    pub fn plan_query_v2(&self, question: &str) -> Result<QueryPlan, AgentError> {
        if question.trim().is_empty() {
            return Err(AgentError::InvalidRequest("empty question".into()));
        }
        let prompt = self.prompts.render(TemplateId::PlanQueryV2, &[("prompt", question)])?;
        let obj = call_json(&self.gateway, TemplateId::PlanQueryV2, &messages(&prompt), &self.config.params)?;
        let list = obj
            .get("keywords")
            .or_else(|| obj.get("value"))
            .and_then(Value::as_array)
            .ok_or_else(|| irrecoverable(&obj, "\"keywords\" is not a list"))?;
        let mut seen = BTreeSet::new();
        let mut keywords = Vec::new();
        for item in list {
            let Some(kw) = item.as_str().map(str::trim).filter(|s| !s.is_empty()) else { continue };
            if seen.insert(kw.to_lowercase()) {
                keywords.push(kw.to_owned());
            }
        }
        if keywords.is_empty() {
            return Err(AgentError::EmptyPlan("keywords"));
        }
        Ok(QueryPlan { variant: AgentVariant::V2, tags: Vec::new(), keywords })
    }

    fn tag_filter(tag: &DomainTag) -> Option<BTreeSet<DomainTag>> {
        (tag.as_str() != GENERAL_TAG).then(|| [tag.clone()].into())
    }

    /// Searches within `tag` and judges each of the top `k` chunks.
    pub fn gather_evidence(
        &self,
        request: &AgentRequest,
        tag: &DomainTag,
        k: usize,
        tracer: &mut Tracer,
    ) -> Result<Vec<EvidenceNote>, AgentError> {
        if k == 0 {
            return Err(IndexError::InvalidK.into());
        }
        let hits = self.search(&request.question, Self::tag_filter(tag).as_ref(), k)?;
        let ids: Vec<String> = hits.into_iter().map(|h| h.chunk_id).collect();
        self.assess_chunks(request, tag, &ids, tracer)
    }

    /// Runs the relevance prompt over each chunk. Unparseable verdicts
    /// count as not relevant and leave a warning in the trace.
    fn assess_chunks(
        &self,
        request: &AgentRequest,
        tag: &DomainTag,
        chunk_ids: &[String],
        tracer: &mut Tracer,
    ) -> Result<Vec<EvidenceNote>, AgentError> {
        let question = request.prompt_text();
        let mut notes = Vec::with_capacity(chunk_ids.len());
        for id in chunk_ids {
            let Some(chunk) = self.index.chunk(id) else { continue };
            let prompt = self.prompts.render(
                TemplateId::EvidenceRag,
                &[("tag", tag.as_str()), ("query_str", &question), ("context_str", &chunk.text)],
            )?;
            let mut note = EvidenceNote {
                chunk_id: chunk.chunk_id.clone(),
                doc_id: chunk.doc_id.clone(),
                tag: tag.clone(),
                relevant: false,
                summary: None,
            };
            match call_json(&self.gateway, TemplateId::EvidenceRag, &messages(&prompt), &self.config.params) {
                Ok(obj) => {
                    let relevant = match obj.get("relevant") {
                        Some(Value::Bool(b)) => Some(*b),
                        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
                            "true" | "yes" => Some(true),
                            "false" | "no" => Some(false),
                            _ => None,
                        },
                        _ => None,
                    };
                    let summary = obj
                        .get("summary")
                        .and_then(text_of)
                        .map(|s| s.trim().to_owned())
                        .filter(|s| !s.is_empty());
                    match (relevant, summary) {
                        (Some(true), Some(s)) => {
                            note.relevant = true;
                            note.summary = Some(s);
                        }
                        (Some(true), None) => tracer.warn(
                            "relevant verdict without a summary; treated as not relevant",
                            json!({ "tag": tag, "chunk_id": id }),
                        ),
                        (Some(false), _) => {}
                        (None, _) => tracer.warn(
                            "verdict lacks a boolean \"relevant\"; treated as not relevant",
                            json!({ "tag": tag, "chunk_id": id }),
                        ),
                    }
                }
                Err(AgentError::Gateway(GatewayError::JsonIrrecoverable { reason, .. })) => tracer.warn(
                    "unparseable relevance verdict; treated as not relevant",
                    json!({ "tag": tag, "chunk_id": id, "reason": reason }),
                ),
                Err(e) => return Err(e),
            }
            notes.push(note);
        }
        tracer.emit(
            EventKind::EvidenceGathered,
            json!({
                "tag": tag,
                "hits": notes.len(),
                "relevant": notes.iter().filter(|n| n.relevant).count(),
                "notes": notes,
            }),
        );
        Ok(notes)
    }

    pub fn gather_background(
        &self,
        request: &AgentRequest,
        tag: &DomainTag,
        notes: &[EvidenceNote],
        tracer: &mut Tracer,
    ) -> Result<ExpertContext, AgentError> {
        let supporting: Vec<EvidenceNote> = notes.iter().filter(|n| n.relevant).cloned().collect();
        let evidence = if supporting.is_empty() {
            NO_EVIDENCE.to_owned()
        } else {
            supporting
                .iter()
                .map(|n| format!("[{}] {}", n.doc_id, n.summary.as_deref().unwrap_or_default()))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let question = request.prompt_text();
        let prompt = self.prompts.render(
            TemplateId::EvidentiaryExpertise,
            &[("tag", tag.as_str()), ("query_prompt", &question), ("evidence", &evidence)],
        )?;
        let exposition = call_text(&self.gateway, TemplateId::EvidentiaryExpertise, &messages(&prompt), &self.config.params)?;
        tracer.emit(
            EventKind::BackgroundReady,
            json!({
                "tag": tag,
                "exposition": exposition,
                "supporting_doc_ids": supporting.iter().map(|n| n.doc_id.as_str()).collect::<Vec<_>>(),
            }),
        );
        Ok(ExpertContext { tag: tag.clone(), exposition, supporting_notes: supporting })
    }

    pub fn synthesize(
        &self,
        request: &AgentRequest,
        contexts: &[ExpertContext],
        tracer: &mut Tracer,
    ) -> Result<SynthesizedAnswer, AgentError> {
        if contexts.is_empty() {
            return Err(AgentError::InvalidRequest("synthesis needs at least one expert context".into()));
        }
        let context = contexts
            .iter()
            .map(|c| format!("[{} expert]\n{}", c.tag, c.exposition))
            .collect::<Vec<_>>()
            .join("\n\n");
        let question = request.prompt_text();
        let prompt = self
            .prompts
            .render(TemplateId::PerspectiveSynthesis, &[("query_prompt", &question), ("context", &context)])?;
        let obj = call_json(&self.gateway, TemplateId::PerspectiveSynthesis, &messages(&prompt), &self.config.params)?;
        let answer = obj
            .get("answer")
            .and_then(text_of)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| irrecoverable(&obj, "missing \"answer\""))?;
        let explanation = obj
            .get("explanation")
            .and_then(text_of)
            .ok_or_else(|| irrecoverable(&obj, "missing \"explanation\""))?;
        let citations: BTreeSet<String> = contexts
            .iter()
            .flat_map(|c| c.supporting_notes.iter().map(|n| n.doc_id.clone()))
            .collect();
        let out = SynthesizedAnswer { answer, explanation, citations };
        tracer.emit(EventKind::SynthesisReady, serde_json::to_value(&out).unwrap_or(Value::Null));
        Ok(out)
    }

    pub fn answer_question(
        &self,
        request: &AgentRequest,
        variant: AgentVariant,
        tracer: &mut Tracer,
    ) -> Result<SynthesizedAnswer, AgentError> {
        match variant {
            AgentVariant::V1 => self.run_v1(request, tracer),
            AgentVariant::V2 => self.run_v2(request, tracer),
        }
    }

    /// Answers with a fixed tag plan; no planning call is made.
    pub fn answer_with_tags(
        &self,
        request: &AgentRequest,
        tags: &[DomainTag],
        tracer: &mut Tracer,
    ) -> Result<SynthesizedAnswer, AgentError> {
        if tags.is_empty() {
            return Err(AgentError::InvalidRequest("no tags given".into()));
        }
        if let Some(t) = tags.iter().find(|t| !self.vocabulary.contains(t)) {
            return Err(AgentError::InvalidRequest(format!("unknown tag {t}")));
        }
        tracer.emit(EventKind::TagsSelected, json!({ "tags": tags, "fixed": true }));
        self.run_plan(request, tags, tracer)
    }

    fn run_v1(&self, request: &AgentRequest, tracer: &mut Tracer) -> Result<SynthesizedAnswer, AgentError> {
        let tags = match self.plan_query_v1(&request.prompt_text(), tracer) {
            Ok(plan) => plan.tags,
            Err(e @ (AgentError::EmptyPlan(_) | AgentError::Gateway(GatewayError::JsonIrrecoverable { .. }))) => {
                tracer.warn(
                    format!("planning failed ({e}); falling back to a corpus-wide search"),
                    json!({ "fallback": GENERAL_TAG }),
                );
                vec![DomainTag::new(GENERAL_TAG)]
            }
            Err(e) => return Err(e),
        };
        tracer.emit(EventKind::TagsSelected, json!({ "tags": tags }));
        self.run_plan(request, &tags, tracer)
    }

    fn run_plan(&self, request: &AgentRequest, tags: &[DomainTag], tracer: &mut Tracer) -> Result<SynthesizedAnswer, AgentError> {
        let mut gathered = Vec::with_capacity(tags.len());
        for tag in tags {
            gathered.push(self.gather_evidence(request, tag, self.config.per_tag_k, tracer)?);
        }
        let mut contexts = Vec::with_capacity(tags.len());
        for (tag, notes) in tags.iter().zip(&gathered) {
            contexts.push(self.gather_background(request, tag, notes, tracer)?);
        }
        self.synthesize(request, &contexts, tracer)
    }

    fn run_v2(&self, request: &AgentRequest, tracer: &mut Tracer) -> Result<SynthesizedAnswer, AgentError> {
        let keywords = match self.plan_query_v2(&request.prompt_text()) {
            Ok(plan) => plan.keywords,
            Err(e @ (AgentError::EmptyPlan(_) | AgentError::Gateway(GatewayError::JsonIrrecoverable { .. }))) => {
                tracer.warn(
                    format!("planning failed ({e}); falling back to a corpus-wide search"),
                    json!({ "fallback": GENERAL_TAG }),
                );
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        tracer.emit(EventKind::KeywordsSelected, json!({ "keywords": keywords }));

        let mut pooled: IndexSet<String> = IndexSet::new();
        for kw in &keywords {
            for hit in self.search(kw, None, self.config.v2_search_depth)? {
                pooled.insert(hit.chunk_id);
            }
        }
        let mut groups: IndexMap<DomainTag, Vec<String>> = IndexMap::new();
        for id in &pooled {
            let Some(chunk) = self.index.chunk(id) else { continue };
            for tag in &chunk.domain_tags {
                let group = groups.entry(tag.clone()).or_default();
                if group.len() < self.config.v2_group_cap {
                    group.push(id.clone());
                }
            }
        }
        if groups.is_empty() {
            if !keywords.is_empty() {
                tracer.warn("no keyword hits; falling back to a corpus-wide search", json!({ "fallback": GENERAL_TAG }));
            }
            let ids = self
                .search(&request.question, None, self.config.v2_group_cap)?
                .into_iter()
                .map(|h| h.chunk_id)
                .collect();
            groups.insert(DomainTag::new(GENERAL_TAG), ids);
        }

        let mut gathered = Vec::with_capacity(groups.len());
        for (tag, ids) in &groups {
            gathered.push(self.assess_chunks(request, tag, ids, tracer)?);
        }
        let mut contexts = Vec::with_capacity(groups.len());
        for (tag, notes) in groups.keys().zip(&gathered) {
            contexts.push(self.gather_background(request, tag, notes, tracer)?);
        }
        self.synthesize(request, &contexts, tracer)
    }
}
