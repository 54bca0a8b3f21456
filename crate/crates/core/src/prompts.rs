//! The eight agent prompt templates and their renderer.
//!
//! Template bodies use Python `str.format` syntax: `{name}` and
//! `{inputs.name}` are bindings, `{{` and `}}` are literal braces. After
//! unescaping, a literal `{ident}` is a late-bound placeholder (the retrieval
//! prompt's `{query_str}` and `{context_str}`), filled in the same pass.
//! Bound values are inserted verbatim and never re-scanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const BODY_MARKER: &str = "\n<<<BODY>>>\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    PlanQueryV1,
    PlanQueryV2,
    EvidentiaryExpertise,
    PerspectiveSynthesis,
    EvidenceRag,
    GapAssessment,
    GapBridge,
    BackgroundExpertise,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::PlanQueryV1,
        TemplateId::PlanQueryV2,
        TemplateId::EvidentiaryExpertise,
        TemplateId::PerspectiveSynthesis,
        TemplateId::EvidenceRag,
        TemplateId::GapAssessment,
        TemplateId::GapBridge,
        TemplateId::BackgroundExpertise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PlanQueryV1 => "plan_query_v1",
            TemplateId::PlanQueryV2 => "plan_query_v2",
            TemplateId::EvidentiaryExpertise => "evidentiary_expertise",
            TemplateId::PerspectiveSynthesis => "perspective_synthesis",
            TemplateId::EvidenceRag => "evidence_rag",
            TemplateId::GapAssessment => "gap_assessment",
            TemplateId::GapBridge => "gap_bridge",
            TemplateId::BackgroundExpertise => "background_expertise",
        }
    }

    fn source(self) -> &'static str {
        match self {
            TemplateId::PlanQueryV1 => include_str!("../prompts/plan_query_v1.prompt"),
            TemplateId::PlanQueryV2 => include_str!("../prompts/plan_query_v2.prompt"),
            TemplateId::EvidentiaryExpertise => include_str!("../prompts/evidentiary_expertise.prompt"),
            TemplateId::PerspectiveSynthesis => include_str!("../prompts/perspective_synthesis.prompt"),
            TemplateId::EvidenceRag => include_str!("../prompts/evidence_rag.prompt"),
            TemplateId::GapAssessment => include_str!("../prompts/gap_assessment.prompt"),
            TemplateId::GapBridge => include_str!("../prompts/gap_bridge.prompt"),
            TemplateId::BackgroundExpertise => include_str!("../prompts/background_expertise.prompt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("missing binding {0:?}")]
    MissingBinding(String),
    #[error("unexpected binding {0:?}")]
    ExtraBinding(String),
    #[error("malformed template {id}: {reason}")]
    Malformed { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Literal(String),
    Field(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system_text: String,
    pub body_text: String,
    parts: Vec<Part>,
    required: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub body: String,
}

impl PromptTemplate {
    /// Parses a `.prompt` source: system text, a `<<<BODY>>>` line, the body,
    /// and one trailing newline.
    pub fn parse(id: TemplateId, source: &str) -> Result<Self, PromptError> {
        let malformed = |reason: &str| PromptError::Malformed { id: id.to_string(), reason: reason.to_owned() };
        let source = source.strip_suffix('\n').unwrap_or(source);
        let (system, body) = source.split_once(BODY_MARKER).ok_or_else(|| malformed("missing <<<BODY>>> line"))?;
        let parts = compile(body).map_err(|r| malformed(&r))?;
        let required = parts
            .iter()
            .filter_map(|p| match p {
                Part::Field(n) => Some(n.clone()),
                Part::Literal(_) => None,
            })
            .collect();
        Ok(PromptTemplate {
            id,
            system_text: system.to_owned(),
            body_text: body.to_owned(),
            parts,
            required,
        })
    }

    pub fn required_bindings(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    /// The body with every placeholder removed and escapes resolved.
    pub fn skeleton(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Literal(s) => Some(s.as_str()),
                Part::Field(_) => None,
            })
            .collect()
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        let mut values: BTreeMap<&str, &str> = BTreeMap::new();
        for &(name, value) in bindings {
            if !self.required.contains(name) || values.insert(name, value).is_some() {
                return Err(PromptError::ExtraBinding(name.to_owned()));
            }
        }
        if let Some(missing) = self.required.iter().find(|n| !values.contains_key(n.as_str())) {
            return Err(PromptError::MissingBinding(missing.clone()));
        }
        let mut body = String::with_capacity(self.body_text.len());
        for part in &self.parts {
            match part {
                Part::Literal(s) => body.push_str(s),
                Part::Field(n) => body.push_str(values[n.as_str()]),
            }
        }
        Ok(RenderedPrompt { system: self.system_text.clone(), body })
    }

    /// Hex SHA-256 of the template source as stored on disk.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update(BODY_MARKER.as_bytes());
        h.update(self.body_text.as_bytes());
        h.update(b"\n");
        hex::encode(h.finalize())
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Stage one: format-string fields and escapes.
fn compile(body: &str) -> Result<Vec<Part>, String> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut rest = body;
    while let Some(i) = rest.find(['{', '}']) {
        lit.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            lit.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            lit.push('}');
            rest = after;
        } else if tail.starts_with('}') {
            return Err(format!("single '}}' at byte {}", body.len() - tail.len()));
        } else {
            let close = tail.find('}').ok_or("unclosed '{'")?;
            let field = &tail[1..close];
            let name = field.strip_prefix("inputs.").unwrap_or(field);
            if !is_ident(name) {
                return Err(format!("unsupported field {field:?}"));
            }
            push_literal(&mut parts, std::mem::take(&mut lit));
            parts.push(Part::Field(name.to_owned()));
            rest = &tail[close + 1..];
        }
    }
    lit.push_str(rest);
    push_literal(&mut parts, lit);
    Ok(parts)
}

/// Stage two: `{ident}` surviving in unescaped literal text.
fn push_literal(parts: &mut Vec<Part>, text: String) {
    let mut rest = text.as_str();
    let mut lit = String::new();
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find(['{', '}']) {
            Some(close) if after[close..].starts_with('}') && is_ident(&after[..close]) => {
                lit.push_str(&rest[..open]);
                if !lit.is_empty() {
                    parts.push(Part::Literal(std::mem::take(&mut lit)));
                }
                parts.push(Part::Field(after[..close].to_owned()));
                rest = &after[close + 1..];
            }
            _ => {
                lit.push_str(&rest[..open + 1]);
                rest = after;
            }
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        parts.push(Part::Literal(lit));
    }
}

/// Immutable, closed set of the eight templates.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl PromptRegistry {
    /// The templates compiled into the binary.
    pub fn builtin() -> &'static PromptRegistry {
        static REGISTRY: OnceLock<PromptRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            PromptRegistry::from_sources(|id| id.source().to_owned()).expect("built-in templates are well-formed")
        })
    }

    pub fn from_sources(mut source: impl FnMut(TemplateId) -> String) -> Result<Self, PromptError> {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| PromptTemplate::parse(id, &source(id)).map(|t| (id, t)))
            .collect::<Result<_, _>>()?;
        Ok(PromptRegistry { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        self.get(id).render(bindings)
    }

    pub fn render_named(&self, id: &str, bindings: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        self.render(id.parse()?, bindings)
    }

    pub fn checksum(&self, id: TemplateId) -> String {
        self.get(id).checksum()
    }
}
