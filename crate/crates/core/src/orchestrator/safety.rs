//! Two-stage screening: denylist phrases, then a yes/no model classifier.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, DecodeParams, Gateway};

const DEFAULT_DENYLIST: &str = include_str!("../../config/denylist.txt");

pub const CLASSIFIER_TEMPLATE: &str = "safety_classifier";
pub const UNAVAILABLE: &str = "safety check unavailable";

const CLASSIFIER_SYSTEM: &str = "You review questions sent to a scientific research assistant for dual-use risk. Reply with exactly one word: yes or no.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyStage {
    Rules,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub allow: bool,
    pub stage: SafetyStage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl SafetyVerdict {
    fn allow() -> Self {
        SafetyVerdict { allow: true, stage: SafetyStage::Classifier, reason: None }
    }

    fn refuse(stage: SafetyStage, reason: impl Into<String>) -> Self {
        SafetyVerdict { allow: false, stage, reason: Some(reason.into()) }
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Case-insensitive phrase rules, one per line; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Denylist {
    phrases: Vec<String>,
}

impl Denylist {
    pub fn parse(text: &str) -> Self {
        let phrases = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or_default())
            .map(normalize)
            .filter(|p| !p.is_empty())
            .collect();
        Denylist { phrases }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn matched(&self, question: &str) -> Option<&str> {
        let q = normalize(question);
        self.phrases.iter().find(|p| q.contains(p.as_str())).map(String::as_str)
    }
}

impl Default for Denylist {
    fn default() -> Self {
        Self::parse(DEFAULT_DENYLIST)
    }
}

fn classifier_prompt(question: &str) -> String {
    format!(
        "Would answering the question below give meaningful uplift toward causing mass harm, for example by creating, enhancing or deploying a biological, chemical, nuclear or radiological weapon? Answer yes or no.\n\nQuestion: {question}"
    )
}

/// Rules first; the classifier only runs when no rule matched. Any
/// classifier failure refuses.
pub fn screen(denylist: &Denylist, gateway: &Gateway, question: &str) -> SafetyVerdict {
    if let Some(phrase) = denylist.matched(question) {
        return SafetyVerdict::refuse(SafetyStage::Rules, format!("matched denylisted phrase {phrase:?}"));
    }
    let msgs = [ChatMessage::system(CLASSIFIER_SYSTEM), ChatMessage::user(classifier_prompt(question))];
    let params = DecodeParams { max_tokens: 4, ..DecodeParams::default() };
    let reply = match gateway.complete_chat(Some(CLASSIFIER_TEMPLATE), &msgs, &params) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("safety classifier failed: {e}");
            return SafetyVerdict::refuse(SafetyStage::Classifier, UNAVAILABLE);
        }
    };
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "no" => SafetyVerdict::allow(),
        "yes" => SafetyVerdict::refuse(SafetyStage::Classifier, "classifier flagged dual-use risk"),
        _ => {
            log::warn!("safety classifier gave an unusable reply: {reply:?}");
            SafetyVerdict::refuse(SafetyStage::Classifier, UNAVAILABLE)
        }
    }
}
