//! Prompt-driven research agents.

mod retrieval;
mod translation;

use serde_json::{Map, Value};
use thiserror::Error;

pub use retrieval::{
    AgentConfig, AgentRequest, AgentVariant, EvidenceNote, ExpertContext, QueryPlan, RetrievalAgent, SynthesizedAnswer,
    GENERAL_TAG, NO_EVIDENCE,
};
pub use translation::{TranslationAgent, TranslationRequest, TranslationResult, TranslationVariant};

use crate::gateway::{ChatMessage, DecodeParams, Gateway, GatewayError};
use crate::index::IndexError;
use crate::prompts::{PromptError, RenderedPrompt, TemplateId};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("the plan selected no usable {0}")]
    EmptyPlan(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Appends lettered choices to a question: `"\n\nOptions:\nA) ...\nB) ..."`.
pub fn with_options(question: &str, choices: &[String]) -> String {
    if choices.is_empty() {
        return question.to_owned();
    }
    let mut out = format!("{question}\n\nOptions:");
    for (i, choice) in choices.iter().enumerate() {
        out.push('\n');
        out.push(choice_letter(i));
        out.push_str(") ");
        out.push_str(choice);
    }
    out
}

pub fn choice_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

fn messages(prompt: &RenderedPrompt) -> Vec<ChatMessage> {
    vec![ChatMessage::system(&prompt.system), ChatMessage::user(&prompt.body)]
}

fn call_text(gateway: &Gateway, id: TemplateId, msgs: &[ChatMessage], params: &DecodeParams) -> Result<String, AgentError> {
    let reply = gateway.complete_chat(Some(id.as_str()), msgs, params)?;
    if reply.trim().is_empty() {
        return Err(GatewayError::MalformedBackendReply(format!("{id} returned an empty reply")).into());
    }
    Ok(reply)
}

fn call_json(
    gateway: &Gateway,
    id: TemplateId,
    msgs: &[ChatMessage],
    params: &DecodeParams,
) -> Result<Map<String, Value>, AgentError> {
    Ok(gateway.complete_json(Some(id.as_str()), msgs, params)?)
}

fn irrecoverable(obj: &Map<String, Value>, reason: impl Into<String>) -> AgentError {
    GatewayError::JsonIrrecoverable { raw: Value::Object(obj.clone()).to_string(), reason: reason.into() }.into()
}

/// Renders a JSON scalar as text; strings are taken as-is.
fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}
