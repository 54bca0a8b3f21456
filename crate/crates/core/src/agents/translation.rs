//! Out-of-domain answer, in-domain answer, gap assessment, gap bridge.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{call_text, AgentError, AgentRequest, RetrievalAgent};
use crate::corpus::DomainTag;
use crate::gateway::ChatMessage;
use crate::prompts::{RenderedPrompt, TemplateId};
use crate::trace::{EventKind, Tracer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationVariant {
    #[default]
    PersistentMemory,
    Interactive,
}

impl TranslationVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TranslationVariant::PersistentMemory => "persistent_memory",
            TranslationVariant::Interactive => "interactive",
        }
    }
}

impl fmt::Display for TranslationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TranslationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "persistent" | "persistent_memory" => Ok(TranslationVariant::PersistentMemory),
            "interactive" => Ok(TranslationVariant::Interactive),
            other => Err(format!("unknown translation variant {other:?} (expected persistent or interactive)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationRequest {
    pub question: String,
    pub history: Option<String>,
    pub in_domain_tags: Vec<DomainTag>,
    pub out_of_domain_tags: Vec<DomainTag>,
    pub variant: TranslationVariant,
}

impl TranslationRequest {
    pub fn new(
        question: impl Into<String>,
        in_domain_tags: Vec<DomainTag>,
        out_of_domain_tags: Vec<DomainTag>,
        variant: TranslationVariant,
    ) -> Self {
        TranslationRequest { question: question.into(), history: None, in_domain_tags, out_of_domain_tags, variant }
    }

    fn agent_request(&self) -> AgentRequest {
        AgentRequest { question: self.question.clone(), history: self.history.clone(), choices: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub out_of_domain_answer: String,
    pub in_domain_answer: String,
    pub knowledge_gap: String,
    pub bridged_answer: String,
    /// Documents cited by the retrieval-backed steps.
    pub citations: BTreeSet<String>,
}

fn join_tags(tags: &[DomainTag]) -> String {
    tags.iter().map(DomainTag::as_str).collect::<Vec<_>>().join(", ")
}

/// Conversation state for one translator role.
#[derive(Debug, Default)]
struct Context {
    memory: Vec<ChatMessage>,
}

impl Context {
    /// Sends the step's system prompt, the accumulated memory, then the new
    /// prompt; both the prompt and the reply join the memory.
    fn step(&mut self, agent: &RetrievalAgent, id: TemplateId, prompt: &RenderedPrompt) -> Result<String, AgentError> {
        let mut msgs = Vec::with_capacity(self.memory.len() + 2);
        msgs.push(ChatMessage::system(&prompt.system));
        msgs.extend(self.memory.iter().cloned());
        msgs.push(ChatMessage::user(&prompt.body));
        let reply = call_text(agent.gateway(), id, &msgs, &agent.config().params)?;
        self.memory.push(ChatMessage::user(&prompt.body));
        self.memory.push(ChatMessage::assistant(&reply));
        Ok(reply)
    }
}

pub struct TranslationAgent {
    retrieval: Arc<RetrievalAgent>,
    rag_in_domain: bool,
}

impl TranslationAgent {
    pub fn new(retrieval: Arc<RetrievalAgent>) -> Self {
        TranslationAgent { retrieval, rag_in_domain: false }
    }

    /// Answer the in-domain step with retrieval instead of the background probe.
    pub fn with_rag_in_domain(mut self, enabled: bool) -> Self {
        self.rag_in_domain = enabled;
        self
    }

    /// Same settings over a different retrieval agent.
    pub fn rebind(&self, retrieval: Arc<RetrievalAgent>) -> Self {
        TranslationAgent { retrieval, rag_in_domain: self.rag_in_domain }
    }

    fn validate(&self, req: &TranslationRequest) -> Result<(), AgentError> {
        if req.question.trim().is_empty() {
            return Err(AgentError::InvalidRequest("empty question".into()));
        }
        if req.in_domain_tags.is_empty() || req.out_of_domain_tags.is_empty() {
            return Err(AgentError::InvalidRequest("both tag lists must be non-empty".into()));
        }
        if let Some(t) = req.in_domain_tags.iter().find(|t| req.out_of_domain_tags.contains(t)) {
            return Err(AgentError::InvalidRequest(format!("tag {t} is both in-domain and out-of-domain")));
        }
        let vocab = self.retrieval.vocabulary();
        if let Some(t) = req.in_domain_tags.iter().chain(&req.out_of_domain_tags).find(|t| !vocab.contains(t)) {
            return Err(AgentError::InvalidRequest(format!("unknown tag {t}")));
        }
        Ok(())
    }

    pub fn translate(&self, req: &TranslationRequest, tracer: &mut Tracer) -> Result<TranslationResult, AgentError> {
        self.validate(req)?;
        let variant = req.variant.as_str();
        let agent_req = req.agent_request();
        let question = agent_req.prompt_text();

        let ood = self.retrieval.answer_with_tags(&agent_req, &req.out_of_domain_tags, tracer)?;
        let ood_answer = format!("{}\n\n{}", ood.answer, ood.explanation);
        let mut citations = ood.citations;

        let mut shared = Context { memory: vec![ChatMessage::user(&question), ChatMessage::assistant(&ood_answer)] };
        let mut ood_ctx = Context { memory: shared.memory.clone() };
        let mut in_ctx = Context::default();
        let interactive = req.variant == TranslationVariant::Interactive;

        let (in_domain_answer, context) = if self.rag_in_domain {
            let ans = self.retrieval.answer_with_tags(&agent_req, &req.in_domain_tags, tracer)?;
            citations.extend(ans.citations);
            let text = format!("{}\n\n{}", ans.answer, ans.explanation);
            let ctx = if interactive { &mut in_ctx } else { &mut shared };
            ctx.memory.push(ChatMessage::user(&question));
            ctx.memory.push(ChatMessage::assistant(&text));
            (text, "retrieval")
        } else {
            let prompt = self.retrieval.prompts().render(
                TemplateId::BackgroundExpertise,
                &[("discipline", &join_tags(&req.in_domain_tags)), ("orig_prompt", &question)],
            )?;
            let ctx = if interactive { &mut in_ctx } else { &mut shared };
            (ctx.step(&self.retrieval, TemplateId::BackgroundExpertise, &prompt)?, "background_expertise")
        };
        tracer.emit(
            EventKind::BackgroundReady,
            json!({
                "step": "in_domain",
                "variant": variant,
                "context": if interactive { "in_domain" } else { "shared" },
                "method": context,
                "tags": req.in_domain_tags,
                "exposition": in_domain_answer,
            }),
        );

        let ood_tags = join_tags(&req.out_of_domain_tags);
        let in_tags = join_tags(&req.in_domain_tags);
        let base = [
            ("out_of_domain_tags_str", ood_tags.as_str()),
            ("in_domain_tags_str", in_tags.as_str()),
            ("orig_prompt", question.as_str()),
            ("out_of_domain_answer", ood_answer.as_str()),
            ("in_domain_answer", in_domain_answer.as_str()),
        ];
        let gap_prompt = self.retrieval.prompts().render(TemplateId::GapAssessment, &base)?;
        let knowledge_gap = if interactive {
            in_ctx.memory.push(ChatMessage::user(format!("[from out-of-domain translator] {ood_answer}")));
            let gap = in_ctx.step(&self.retrieval, TemplateId::GapAssessment, &gap_prompt)?;
            ood_ctx.memory.push(ChatMessage::user(format!("[from in-domain translator] {gap}")));
            gap
        } else {
            shared.step(&self.retrieval, TemplateId::GapAssessment, &gap_prompt)?
        };
        tracer.emit(
            EventKind::GapAssessed,
            json!({
                "variant": variant,
                "context": if interactive { "in_domain" } else { "shared" },
                "knowledge_gap": knowledge_gap,
                "memory_len": if interactive { in_ctx.memory.len() } else { shared.memory.len() },
            }),
        );

        let mut bridge_bindings = base.to_vec();
        bridge_bindings.push(("knowledge_gap", knowledge_gap.as_str()));
        let bridge_prompt = self.retrieval.prompts().render(TemplateId::GapBridge, &bridge_bindings)?;
        let ctx = if interactive { &mut in_ctx } else { &mut shared };
        let bridged_answer = ctx.step(&self.retrieval, TemplateId::GapBridge, &bridge_prompt)?;
        let mut payload = json!({
            "variant": variant,
            "context": if interactive { "in_domain" } else { "shared" },
            "bridged_answer": bridged_answer,
        });
        if interactive {
            payload["peer_messages"] = json!({ "out_of_domain": ood_ctx.memory.len() - 2, "in_domain": 1 });
        }
        tracer.emit(EventKind::Bridged, payload);

        Ok(TranslationResult {
            out_of_domain_answer: ood_answer,
            in_domain_answer,
            knowledge_gap,
            bridged_answer,
            citations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, Role, ScriptRule};
    use crate::test_support::{corpus3, embedder, gateway, index_for, vocab};

    fn script() -> MockBackend {
        MockBackend::new("m").with_rules([
            ScriptRule::new("evidence_rag", r#"{"relevant": true, "summary": "Attention weighs tokens."}"#),
            ScriptRule::new("evidentiary_expertise", "CS exposition."),
            ScriptRule::new("perspective_synthesis", r#"{"answer": "Attention is weighting.", "explanation": "It scores pairs."}"#),
            ScriptRule::new("background_expertise", "In biology, attention is like selective binding."),
            ScriptRule::new("gap_assessment", "The gap is the notion of learned weights."),
            ScriptRule::new("gap_bridge", "Bridged: think of attention as affinity."),
        ])
    }

    fn agent(mock: MockBackend) -> (TranslationAgent, Arc<MockBackend>) {
        let (gw, mock) = gateway(mock);
        let r = RetrievalAgent::new(gw, index_for(&corpus3()), vocab()).with_embedder(embedder());
        (TranslationAgent::new(Arc::new(r)), mock)
    }

    fn request(variant: TranslationVariant) -> TranslationRequest {
        TranslationRequest::new(
            "What is attention?",
            vec![DomainTag::new("biology")],
            vec![DomainTag::new("computer-science-and-engineering")],
            variant,
        )
    }

    #[test]
    fn variants_agree_on_texts() {
        let (a, _) = agent(script());
        let mut tp = Tracer::new();
        let p = a.translate(&request(TranslationVariant::PersistentMemory), &mut tp).unwrap();
        let (a, _) = agent(script());
        let mut ti = Tracer::new();
        let i = a.translate(&request(TranslationVariant::Interactive), &mut ti).unwrap();
        assert_eq!(p, i);
        assert_eq!(p.bridged_answer, "Bridged: think of attention as affinity.");
        assert_eq!(p.out_of_domain_answer, "Attention is weighting.\n\nIt scores pairs.");
        assert_eq!(p.citations, BTreeSet::from(["cs-1".to_owned()]));

        let tail = |t: &Tracer| t.kinds()[t.kinds().len() - 3..].to_vec();
        use EventKind::*;
        assert_eq!(tail(&tp), [BackgroundReady, GapAssessed, Bridged]);
        assert_eq!(tail(&ti), [BackgroundReady, GapAssessed, Bridged]);
        assert_eq!(tp.events().last().unwrap().payload["context"], "shared");
        assert_eq!(ti.events().last().unwrap().payload["context"], "in_domain");
    }

    #[test]
    fn persistent_memory_accumulates() {
        let (a, mock) = agent(script());
        a.translate(&request(TranslationVariant::PersistentMemory), &mut Tracer::new()).unwrap();
        let calls = mock.calls();
        let bridge = calls.iter().find(|c| c.template.as_deref() == Some("gap_bridge")).unwrap();
        // system, question, ood answer, in prompt, in reply, gap prompt, gap reply, bridge prompt
        assert_eq!(bridge.messages.len(), 8);
        assert_eq!(bridge.messages[0].role, Role::System);
        let body = &bridge.messages[7].content;
        assert!(body.contains("Attention is weighting.\n\nIt scores pairs."));
        assert!(body.contains("In biology, attention is like selective binding."));
        assert!(body.contains("Output the new answer."));
    }

    #[test]
    fn interactive_injects_peer_message() {
        let (a, mock) = agent(script());
        a.translate(&request(TranslationVariant::Interactive), &mut Tracer::new()).unwrap();
        let calls = mock.calls();
        let gap = calls.iter().find(|c| c.template.as_deref() == Some("gap_assessment")).unwrap();
        assert!(gap.messages.iter().any(|m| m.content.starts_with("[from out-of-domain translator] Attention is weighting.")));
        let bg = calls.iter().find(|c| c.template.as_deref() == Some("background_expertise")).unwrap();
        assert_eq!(bg.messages.len(), 2);
        assert!(bg.messages[1].content.contains("you are an expert in biology."));
    }

    #[test]
    fn request_validation() {
        let (a, _) = agent(script());
        let mut bad = request(TranslationVariant::Interactive);
        bad.in_domain_tags.push(DomainTag::new("computer-science-and-engineering"));
        assert!(matches!(a.translate(&bad, &mut Tracer::new()), Err(AgentError::InvalidRequest(_))));
        let mut bad = request(TranslationVariant::Interactive);
        bad.out_of_domain_tags.clear();
        assert!(a.translate(&bad, &mut Tracer::new()).is_err());
        let mut bad = request(TranslationVariant::Interactive);
        bad.in_domain_tags = vec![DomainTag::new("astrology")];
        assert!(a.translate(&bad, &mut Tracer::new()).is_err());
    }

    #[test]
    fn discipline_joins_with_comma() {
        let (a, mock) = agent(script());
        let mut req = request(TranslationVariant::PersistentMemory);
        req.in_domain_tags = vec![DomainTag::new("biology"), DomainTag::new("chemistry")];
        a.translate(&req, &mut Tracer::new()).unwrap();
        let calls = mock.calls();
        let bg = calls.iter().find(|c| c.template.as_deref() == Some("background_expertise")).unwrap();
        assert!(bg.messages.last().unwrap().content.contains("biology, chemistry"));
    }

    #[test]
    fn variant_names() {
        assert_eq!("persistent".parse::<TranslationVariant>().unwrap(), TranslationVariant::PersistentMemory);
        assert_eq!("interactive".parse::<TranslationVariant>().unwrap(), TranslationVariant::Interactive);
        assert!("both".parse::<TranslationVariant>().is_err());
    }
}
