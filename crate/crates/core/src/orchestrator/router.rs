//! Tool-selection routing between the implemented agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentVariant, TranslationVariant};
use crate::corpus::{DomainTag, TagVocabulary};
use crate::gateway::{ChatMessage, DecodeParams, Gateway};

pub const ROUTER_TEMPLATE: &str = "route";

const ROUTER_SYSTEM: &str = "You are the dispatcher of a research assistant. Choose one tool for the user's latest question. Respond in JSON format only.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteTarget {
    RetrievalV1,
    RetrievalV2,
    Translation,
}

impl RouteTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteTarget::RetrievalV1 => "retrieval_v1",
            RouteTarget::RetrievalV2 => "retrieval_v2",
            RouteTarget::Translation => "translation",
        }
    }

    pub fn retrieval(variant: AgentVariant) -> Self {
        match variant {
            AgentVariant::V1 => RouteTarget::RetrievalV1,
            AgentVariant::V2 => RouteTarget::RetrievalV2,
        }
    }
}

impl fmt::Display for RouteTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouteTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "retrieval_v1" => Ok(RouteTarget::RetrievalV1),
            "retrieval_v2" => Ok(RouteTarget::RetrievalV2),
            "translation" => Ok(RouteTarget::Translation),
            other => Err(format!("unknown tool {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub target: RouteTarget,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub in_tags: Vec<DomainTag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub out_tags: Vec<DomainTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_variant: Option<TranslationVariant>,
    /// Taken from the request rather than chosen by the model.
    #[serde(default)]
    pub forced: bool,
}

impl RouteDecision {
    pub fn retrieval(variant: AgentVariant) -> Self {
        RouteDecision {
            target: RouteTarget::retrieval(variant),
            in_tags: Vec::new(),
            out_tags: Vec::new(),
            translation_variant: None,
            forced: false,
        }
    }
}

/// Tools the router may offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToolMenu {
    pub retrieval_v2: bool,
    pub translation: bool,
}

impl Default for ToolMenu {
    fn default() -> Self {
        ToolMenu { retrieval_v2: true, translation: true }
    }
}

fn menu_prompt(menu: ToolMenu, vocabulary: &TagVocabulary, history: Option<&str>, question: &str) -> String {
    let tags: Vec<&str> = vocabulary.tags().iter().map(DomainTag::as_str).collect();
    let mut out = String::from("Tools:\n- retrieval_v1: answers by selecting the relevant domain tags and consulting one expert per domain. Arguments: none.\n");
    if menu.retrieval_v2 {
        out.push_str("- retrieval_v2: answers by planning search keywords across the whole corpus. Arguments: none.\n");
    }
    if menu.translation {
        out.push_str(&format!(
            "- translation: explains a concept from one field in the language of another. Arguments: \"in\" (the user's own field) and \"out\" (the field the concept comes from), each one of [{}].\n",
            tags.join(", ")
        ));
    }
    out.push_str("\nReply as {\"tool\": \"<name>\"}, adding \"in\" and \"out\" only for translation.\n\n");
    if let Some(h) = history.filter(|h| !h.is_empty()) {
        out.push_str(h);
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(question);
    out
}

fn tag_list(v: Option<&Value>) -> Vec<DomainTag> {
    match v {
        Some(Value::String(s)) => s.split(',').map(DomainTag::new).filter(|t| !t.as_str().is_empty()).collect(),
        Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).map(DomainTag::new).collect(),
        _ => Vec::new(),
    }
}

/// Asks the model to pick a tool. `Err` carries the reason the reply was
/// unusable; callers fall back to the default route.
pub fn route(
    gateway: &Gateway,
    menu: ToolMenu,
    vocabulary: &TagVocabulary,
    history: Option<&str>,
    question: &str,
    params: &DecodeParams,
) -> Result<RouteDecision, String> {
    let msgs = [ChatMessage::system(ROUTER_SYSTEM), ChatMessage::user(menu_prompt(menu, vocabulary, history, question))];
    let obj = gateway.complete_json(Some(ROUTER_TEMPLATE), &msgs, params).map_err(|e| e.to_string())?;
    let tool = obj.get("tool").and_then(Value::as_str).ok_or("reply has no \"tool\"")?;
    let target: RouteTarget = tool.parse()?;
    let enabled = match target {
        RouteTarget::RetrievalV1 => true,
        RouteTarget::RetrievalV2 => menu.retrieval_v2,
        RouteTarget::Translation => menu.translation,
    };
    if !enabled {
        return Err(format!("tool {tool:?} is disabled"));
    }
    let mut decision = RouteDecision { target, in_tags: Vec::new(), out_tags: Vec::new(), translation_variant: None, forced: false };
    if target == RouteTarget::Translation {
        decision.in_tags = tag_list(obj.get("in"));
        decision.out_tags = tag_list(obj.get("out"));
        if decision.in_tags.is_empty() || decision.out_tags.is_empty() {
            return Err("translation needs \"in\" and \"out\" tags".into());
        }
        if let Some(t) = decision.in_tags.iter().chain(&decision.out_tags).find(|t| !vocabulary.contains(t)) {
            return Err(format!("unknown tag {t}"));
        }
        if decision.in_tags.iter().any(|t| decision.out_tags.contains(t)) {
            return Err("\"in\" and \"out\" tags overlap".into());
        }
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, ScriptRule};
    use std::sync::Arc;

    fn run(reply: &str, history: Option<&str>) -> (Result<RouteDecision, String>, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new("m").with_rule(ScriptRule::new(ROUTER_TEMPLATE, reply)));
        let gw = Gateway::new(mock.clone()).with_retry_budget(0);
        let r = route(&gw, ToolMenu::default(), &TagVocabulary::default(), history, "Q?", &DecodeParams::default());
        (r, mock)
    }

    #[test]
    fn translation_route() {
        let (r, _) = run(r#"{"tool":"translation","in":"biology","out":"computer-science-and-engineering"}"#, None);
        let d = r.unwrap();
        assert_eq!(d.target, RouteTarget::Translation);
        assert_eq!(d.in_tags, [DomainTag::new("biology")]);
    }

    #[test]
    fn unusable_replies() {
        assert!(run(r#"{"tool":"reasoning"}"#, None).0.is_err());
        assert!(run("not json", None).0.is_err());
        assert!(run(r#"{"tool":"translation","in":"biology"}"#, None).0.is_err());
        assert!(run(r#"{"tool":"translation","in":"biology","out":"biology"}"#, None).0.is_err());
    }

    #[test]
    fn history_reaches_prompt() {
        let (r, mock) = run(r#"{"tool":"retrieval_v2"}"#, Some("Conversation so far:\nUser: first\nAssistant: reply"));
        assert_eq!(r.unwrap().target, RouteTarget::RetrievalV2);
        assert!(mock.calls()[0].messages[1].content.contains("User: first\nAssistant: reply"));
    }
}
