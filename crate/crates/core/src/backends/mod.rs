//! Interfaces for every learned component the engine talks to.
//!
//! The engine never runs a model itself. It goes through five narrow traits:
//! [`ChatBackend`] (the large model, used for the reader, decomposition,
//! synthesis and judging), [`Embedder`], [`SpanExtractor`], [`Rewriter`] and
//! [`EntityAnnotator`]. Each has an HTTP implementation in [`http`] and a
//! deterministic implementation in [`mock`] (or [`entities`] for the rule-based
//! annotator, which is also the production default).

pub mod entities;
pub mod http;
pub mod mock;
mod retry;
pub mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use retry::RetryPolicy;

/// Score below which an extracted span is treated as "no answer".
pub const EXTRACTOR_SCORE_FLOOR: f32 = 0.1;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Network-level failure. Retried by [`RetryPolicy`] before surfacing.
    #[error("transport error: {0}")]
    Transport(String),
    /// The peer answered but the body did not match the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    /// Returns a unit-length copy, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<EmbeddingVector> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(EmbeddingVector::new(self.values.iter().map(|v| v / norm).collect()))
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f32 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// An answer span picked out of one of the extractor's contexts.
///
/// `start` and `end` are inclusive indices into the context's word tokens as
/// produced by [`text::word_tokens`]; `answer_text` is the verbatim slice of
/// the context covering those tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanResult {
    pub answer_text: String,
    pub context_index: usize,
    pub start: usize,
    pub end: usize,
    pub score: f32,
}

impl SpanResult {
    /// True when the span should be used rather than falling back to the
    /// top retrieved answer.
    pub fn is_usable(&self) -> bool {
        !self.answer_text.trim().is_empty() && self.score >= EXTRACTOR_SCORE_FLOOR
    }

    /// Checks that `answer_text` is exactly the token span it claims to be.
    pub fn matches_contexts(&self, contexts: &[String]) -> bool {
        let Some(context) = contexts.get(self.context_index) else {
            return false;
        };
        if self.start > self.end {
            return false;
        }
        text::token_span(context, self.start, self.end) == Some(self.answer_text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub rewritten: String,
}

impl RewriteResult {
    /// Non-empty and mentions every entity verbatim.
    pub fn satisfies(&self, entities: &[String]) -> bool {
        !self.rewritten.trim().is_empty() && entities.iter().all(|e| self.rewritten.contains(e.as_str()))
    }
}

/// A labelled entity mention. Offsets are byte offsets into the passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub label: String,
    pub char_start: usize,
    pub char_end: usize,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage], temperature: f32) -> Result<ChatResponse, BackendError>;
}

pub trait Embedder: Send + Sync {
    /// Dimension of every vector this backend produces.
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

pub trait SpanExtractor: Send + Sync {
    fn extract_span(&self, question: &str, contexts: &[String]) -> Result<SpanResult, BackendError>;
}

pub trait Rewriter: Send + Sync {
    fn rewrite(&self, question: &str, entities: &[String]) -> Result<RewriteResult, BackendError>;
}

pub trait EntityAnnotator: Send + Sync {
    fn annotate(&self, passage_text: &str) -> Result<Vec<EntityMention>, BackendError>;
}

/// Whitespace token count. Used wherever a backend does not report usage.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Token count of a prompt: the sum over all message contents.
pub fn count_prompt_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| count_tokens(&m.content)).sum()
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidInput("chat called with no messages".into()));
    }
    if messages.iter().any(|m| m.role == Role::User && m.content.trim().is_empty()) {
        return Err(BackendError::InvalidInput("user message content is empty".into()));
    }
    Ok(())
}

pub(crate) fn check_texts(texts: &[String]) -> Result<(), BackendError> {
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(BackendError::InvalidInput(format!("embedding input {pos} is empty")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_tokens_collapses_whitespace() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a b  c"), 3);
        assert_eq!(count_tokens("  \n\t "), 0);
    }

    #[test]
    fn judge_prompt_token_count_matches_hand_count() {
        // Every field filled with a one-word value. Hand count per line:
        // 16 + 14 + 26 + (1+1) + (1+1) + (2+1) + 2 = 65
        let prompt = crate::eval::judge_prompt("q", "p", "a");
        assert_eq!(count_tokens(&prompt), 65);
    }

    #[test]
    fn normalized_rejects_zero_vector() {
        assert!(EmbeddingVector::new(vec![0.0; 4]).normalized().is_none());
        let v = EmbeddingVector::new(vec![3.0, 4.0]).normalized().unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn span_result_slicing_check() {
        let contexts = vec!["Q: Where? A: Paris, France".to_string()];
        let span = SpanResult { answer_text: "France".into(), context_index: 0, start: 8, end: 8, score: 1.0 };
        assert!(span.matches_contexts(&contexts));
        let wrong = SpanResult { answer_text: "Paris".into(), ..span.clone() };
        assert!(!wrong.matches_contexts(&contexts));
        let out_of_range = SpanResult { context_index: 3, ..span };
        assert!(!out_of_range.matches_contexts(&contexts));
    }

    #[test]
    fn empty_user_message_rejected() {
        assert!(check_messages(&[]).is_err());
        assert!(check_messages(&[ChatMessage::user("  ")]).is_err());
        assert!(check_messages(&[ChatMessage::system(""), ChatMessage::user("hi")]).is_ok());
    }
}
