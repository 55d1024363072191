//! Online stage.
//!
//! A query costs exactly two chat calls whatever its hop count: one to
//! decompose it into a dependency graph of sub-questions, one to synthesize
//! the answer from the resolved hops. In between, every hop is resolved
//! locally: ground the sub-question with its parents' answers, retrieve QA
//! pairs, extract the answer span. The ablation modes switch the local
//! components off; `VanillaRag` skips decomposition entirely and spends a
//! single chat call.

mod decompose;
mod ground;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, Embedder, Rewriter, SpanExtractor};
use crate::index::{IndexError, VectorIndex, DEFAULT_K};
use crate::kbgen::{KnowledgeBase, QaPair};
use crate::ledger::{CallLedger, Stage};

pub use decompose::{
    decompose, decomposition_messages, placeholder, placeholders_in, topo_order, DecompositionPlan, SubQuestion,
    DECOMPOSE_MARKER,
};
pub use ground::ground_subquestion;

/// Version of the synthesis and vanilla prompt templates below.
pub const SYNTHESIS_PROMPT_VERSION: &str = "1";
pub const SYNTHESIS_MARKER: &str = "You answer a multi-hop question from resolved sub-questions";
pub const VANILLA_MARKER: &str = "Answer the question using the retrieved evidence.";

const SYNTHESIS_SYSTEM: &str = "You answer a multi-hop question from resolved sub-questions and retrieved QA evidence.\nReply with the final answer only: a short phrase taken from the evidence when possible, with no explanation.";
const VANILLA_SYSTEM: &str = "Answer the question using the retrieved evidence.\nReply with the final answer only: a short phrase, with no explanation.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty question")]
    EmptyQuestion,
    #[error("decomposition error: {0}")]
    Decomposition(String),
    #[error("decomposition error: dependency cycle through sub-questions {0:?}")]
    Cycle(Vec<u32>),
    #[error("scheduling error: {0}")]
    Scheduling(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("query {id}: {source}")]
    Query {
        id: String,
        #[source]
        source: Box<PipelineError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Extractor and rewriter both active.
    Full,
    /// Parent answers are appended to the sub-question instead of rewriting.
    NoRewriter,
    /// Raw sub-questions are retrieved directly; the top hit is the answer.
    RetrievalOnly,
    /// One retrieval with the original question, one chat call.
    VanillaRag,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoRewriter, Mode::RetrievalOnly, Mode::VanillaRag];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoRewriter => "no_rewriter",
            Mode::RetrievalOnly => "retrieval_only",
            Mode::VanillaRag => "vanilla_rag",
        }
    }

    pub fn uses_extractor(self) -> bool {
        matches!(self, Mode::Full | Mode::NoRewriter)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected full, no_rewriter, retrieval_only or vanilla_rag)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPair {
    pub pair: QaPair,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub sub_id: u32,
    pub raw_text: String,
    pub resolved_text: String,
    pub retrieved: Vec<RetrievedPair>,
    pub extracted_answer: String,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub plan: DecompositionPlan,
    /// One record per sub-question, in execution order.
    pub hops: Vec<HopRecord>,
}

impl EvidenceBundle {
    /// True when every hop runs after all of its dependencies.
    pub fn respects_dependencies(&self) -> bool {
        let position: HashMap<u32, usize> = self.hops.iter().enumerate().map(|(i, h)| (h.sub_id, i)).collect();
        self.hops.len() == self.plan.sub_questions.len()
            && self.plan.sub_questions.iter().all(|s| {
                let Some(&me) = position.get(&s.id) else { return false };
                s.depends_on.iter().all(|d| position.get(d).is_some_and(|&p| p < me))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub question: String,
    pub answer: String,
    pub mode: Mode,
    pub ledger: CallLedger,
    pub evidence: EvidenceBundle,
}

impl QueryResult {
    /// JSON for the command line; the evidence bundle only on request.
    pub fn to_json(&self, emit_evidence: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "question": self.question,
            "answer": self.answer,
            "mode": self.mode,
            "ledger": self.ledger,
        });
        if emit_evidence {
            v["evidence"] = serde_json::to_value(&self.evidence).expect("evidence serializes");
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    /// Extra decomposition calls allowed when the reply is unusable.
    pub decompose_retries: u32,
    pub temperature: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, decompose_retries: 2, temperature: 0.0 }
    }
}

/// Everything a query needs. Holds only shared references, so one instance
/// can serve many queries from many threads.
pub struct Pipeline<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub extractor: &'a dyn SpanExtractor,
    pub rewriter: &'a dyn Rewriter,
    pub kb: &'a KnowledgeBase,
    pub index: &'a VectorIndex,
    pub config: PipelineConfig,
    by_id: HashMap<&'a str, &'a QaPair>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        chat: &'a dyn ChatBackend,
        embedder: &'a dyn Embedder,
        extractor: &'a dyn SpanExtractor,
        rewriter: &'a dyn Rewriter,
        kb: &'a KnowledgeBase,
        index: &'a VectorIndex,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        if config.k == 0 {
            return Err(IndexError::InvalidK.into());
        }
        let by_id: HashMap<&str, &QaPair> = kb.pairs.iter().map(|p| (p.qa_id.as_str(), p)).collect();
        if let Some(missing) = index.entries().iter().find(|e| !by_id.contains_key(e.qa_id.as_str())) {
            return Err(
                IndexError::Config(format!("index entry {} is not in the knowledge base", missing.qa_id)).into()
            );
        }
        Ok(Self { chat, embedder, extractor, rewriter, kb, index, config, by_id })
    }

    fn retrieve(&self, query: &str, ledger: &mut CallLedger) -> Result<Vec<RetrievedPair>, PipelineError> {
        if self.index.is_empty() {
            return Err(IndexError::NoValidPairs.into());
        }
        let hits = self.index.search(query, self.config.k, self.embedder)?;
        ledger.record_embed(Stage::Retrieve);
        Ok(hits.into_iter().map(|h| RetrievedPair { pair: self.by_id[h.qa_id].clone(), score: h.score }).collect())
    }

    /// Retrieves evidence for one grounded sub-question and extracts its
    /// answer. Without a usable span the top retrieved answer stands in.
    pub fn resolve_hop(
        &self,
        sub: &SubQuestion,
        resolved: String,
        mode: Mode,
        ledger: &mut CallLedger,
    ) -> Result<HopRecord, PipelineError> {
        let retrieved = self.retrieve(&resolved, ledger)?;
        let top_answer = retrieved[0].pair.answer.trim().to_string();
        let (extracted_answer, fallback_used) = if mode.uses_extractor() {
            let contexts: Vec<String> = retrieved.iter().map(|r| r.pair.candidate_text()).collect();
            ledger.record_extract();
            match self.extractor.extract_span(&resolved, &contexts) {
                Ok(span) if span.is_usable() => (span.answer_text, false),
                Ok(span) => {
                    tracing::debug!(score = span.score, "extractor gave no usable span, using top retrieval");
                    (top_answer, true)
                }
                Err(e @ BackendError::Transport(_)) => return Err(e.into()),
                Err(e) => {
                    tracing::warn!(error = %e, "extractor failed, using top retrieval");
                    (top_answer, true)
                }
            }
        } else {
            (top_answer, false)
        };
        Ok(HopRecord {
            sub_id: sub.id,
            raw_text: sub.text.clone(),
            resolved_text: resolved,
            retrieved,
            extracted_answer,
            fallback_used,
        })
    }

    /// Second chat call: the original question plus every resolved hop.
    pub fn synthesize(
        &self,
        question: &str,
        evidence: &EvidenceBundle,
        ledger: &mut CallLedger,
    ) -> Result<String, PipelineError> {
        let messages = synthesis_messages(question, evidence);
        let response = self.chat.chat(&messages, self.config.temperature)?;
        ledger.record_chat(Stage::Synthesize, &response);
        Ok(response.text.trim().to_string())
    }

    fn vanilla(&self, question: &str, ledger: &mut CallLedger) -> Result<QueryResult, PipelineError> {
        let retrieved = self.retrieve(question, ledger)?;
        let messages = vanilla_messages(question, &retrieved);
        let response = self.chat.chat(&messages, self.config.temperature)?;
        ledger.record_chat(Stage::Vanilla, &response);
        let plan = DecompositionPlan::single_hop(question);
        let hop = HopRecord {
            sub_id: 1,
            raw_text: question.to_string(),
            resolved_text: question.to_string(),
            extracted_answer: retrieved[0].pair.answer.trim().to_string(),
            retrieved,
            fallback_used: false,
        };
        Ok(QueryResult {
            question: question.to_string(),
            answer: response.text.trim().to_string(),
            mode: Mode::VanillaRag,
            ledger: std::mem::take(ledger),
            evidence: EvidenceBundle { plan, hops: vec![hop] },
        })
    }

    fn run(&self, question: &str, mode: Mode) -> Result<QueryResult, PipelineError> {
        if question.trim().is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        let mut ledger = CallLedger::new();
        if mode == Mode::VanillaRag {
            return self.vanilla(question, &mut ledger);
        }
        let plan = decompose(question, self.chat, self.config.decompose_retries, self.config.temperature, &mut ledger)?;
        let mut answers: BTreeMap<u32, String> = BTreeMap::new();
        let mut hops = Vec::with_capacity(plan.sub_questions.len());
        for sub in topo_order(&plan)? {
            let resolved = ground_subquestion(sub, &answers, mode, self.rewriter, &mut ledger)?;
            let hop = self.resolve_hop(sub, resolved, mode, &mut ledger)?;
            answers.insert(sub.id, hop.extracted_answer.clone());
            hops.push(hop);
        }
        let evidence = EvidenceBundle { plan, hops };
        let answer = self.synthesize(question, &evidence, &mut ledger)?;
        Ok(QueryResult { question: question.to_string(), answer, mode, ledger, evidence })
    }

    /// Answers one question. Errors carry `query_id`.
    pub fn answer_query(&self, query_id: &str, question: &str, mode: Mode) -> Result<QueryResult, PipelineError> {
        self.run(question, mode).map_err(|e| PipelineError::Query { id: query_id.to_string(), source: Box::new(e) })
    }
}

fn evidence_line(pair: &QaPair) -> String {
    format!("- Q: {} A: {}", pair.question, pair.answer)
}

pub fn synthesis_messages(question: &str, evidence: &EvidenceBundle) -> Vec<ChatMessage> {
    let mut user = format!("Question: {question}\n\n");
    for hop in &evidence.hops {
        user.push_str(&format!("Sub-question {}: {}\n", hop.sub_id, hop.resolved_text));
        user.push_str(&format!("Sub-answer {}: {}\n", hop.sub_id, hop.extracted_answer));
        user.push_str(&format!("Evidence {}:\n", hop.sub_id));
        for r in &hop.retrieved {
            user.push_str(&evidence_line(&r.pair));
            user.push('\n');
        }
        user.push('\n');
    }
    user.push_str("Final answer:");
    vec![ChatMessage::system(SYNTHESIS_SYSTEM), ChatMessage::user(user)]
}

pub fn vanilla_messages(question: &str, retrieved: &[RetrievedPair]) -> Vec<ChatMessage> {
    let mut user = String::from("Evidence:\n");
    for r in retrieved {
        user.push_str(&evidence_line(&r.pair));
        user.push('\n');
    }
    user.push_str(&format!("\nQuestion: {question}\nAnswer:"));
    vec![ChatMessage::system(VANILLA_SYSTEM), ChatMessage::user(user)]
}

#[cfg(test)]
mod tests;
