//! Deterministic stand-ins for every backend.
//!
//! All mocks are pure functions of their input and construction parameters,
//! so whole pipelines built from them are reproducible byte for byte. Token
//! usage is reported as whitespace token counts.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::text::{content_words, is_stopword, lower_words, word_tokens, Token};
use super::{
    check_messages, check_texts, count_prompt_tokens, count_tokens, BackendError, ChatBackend, ChatMessage,
    ChatResponse, Embedder, EmbeddingVector, RewriteResult, Rewriter, SpanExtractor, SpanResult,
};
use crate::{eval, kbgen, pipeline};

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn respond(messages: &[ChatMessage], text: String) -> ChatResponse {
    ChatResponse { prompt_tokens: count_prompt_tokens(messages), completion_tokens: count_tokens(&text), text }
}

/// Signed feature hashing of lowercased word tokens.
///
/// Each token lands in one bucket with a sign and a weight in `[0.5, 1.5)`,
/// all derived from a seeded FNV-1a hash, so texts sharing words have
/// positive cosine and identical texts have identical vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0f32; self.dim];
        let mut words = lower_words(text);
        if words.is_empty() {
            words.push(text.trim().to_string());
        }
        for word in &words {
            let h = fnv1a(self.seed, word.as_bytes());
            let bucket = ((h >> 1) % self.dim as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            let weight = 0.5 + ((h >> 40) as f32) / (1u64 << 24) as f32;
            values[bucket] += sign * weight;
        }
        EmbeddingVector::new(values)
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Replays a fixed sequence of responses, one per call, and records every
/// prompt it was sent. Errors once the script runs out.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    script: Mutex<VecDeque<Result<String, String>>>,
    seen: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self { script: Mutex::new(responses.into_iter().map(|r| Ok(r.into())).collect()), seen: Mutex::default() }
    }

    /// Queues a transport failure as the next response.
    pub fn push_transport_error(&self, msg: &str) {
        self.script.lock().unwrap().push_back(Err(msg.to_string()));
    }

    pub fn push(&self, response: impl Into<String>) {
        self.script.lock().unwrap().push_back(Ok(response.into()));
    }

    pub fn prompts(&self) -> Vec<Vec<ChatMessage>> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, messages: &[ChatMessage], _temperature: f32) -> Result<ChatResponse, BackendError> {
        check_messages(messages)?;
        self.seen.lock().unwrap().push(messages.to_vec());
        match self.script.lock().unwrap().pop_front() {
            Some(Ok(text)) => Ok(respond(messages, text)),
            Some(Err(msg)) => Err(BackendError::Transport(msg)),
            None => Err(BackendError::Protocol("scripted chat exhausted".into())),
        }
    }
}

/// Wraps a closure from prompt to reply text.
pub struct FnChat<F>(pub F);

impl<F> ChatBackend for FnChat<F>
where
    F: Fn(&[ChatMessage]) -> String + Send + Sync,
{
    fn chat(&self, messages: &[ChatMessage], _temperature: f32) -> Result<ChatResponse, BackendError> {
        check_messages(messages)?;
        Ok(respond(messages, (self.0)(messages)))
    }
}

/// A rule-driven chat model that recognizes each prompt the engine sends.
///
/// * reader prompts: a canned reply if one was configured, otherwise one QA
///   pair per sentence, split at the first copula (`X is Y.` becomes
///   `What is X?` / `Y`);
/// * decomposition prompts: a registered plan for the question, otherwise a
///   single sub-question equal to the question;
/// * synthesis prompts: the last hop's sub-answer;
/// * vanilla prompts: the answer of the first evidence line;
/// * judge prompts: `yes` when the normalized gold answer occurs in the
///   normalized prediction, else `no`.
#[derive(Debug, Clone, Default)]
pub struct RuleChat {
    plans: HashMap<String, String>,
    reader_reply: Option<String>,
}

impl RuleChat {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the raw decomposition reply for `question`.
    pub fn with_plan(mut self, question: impl Into<String>, plan_json: impl Into<String>) -> Self {
        self.plans.insert(question.into(), plan_json.into());
        self
    }

    pub fn add_plan(&mut self, question: impl Into<String>, plan_json: impl Into<String>) {
        self.plans.insert(question.into(), plan_json.into());
    }

    /// Replies to every reader prompt with `reply`.
    pub fn with_reader_reply(mut self, reply: impl Into<String>) -> Self {
        self.reader_reply = Some(reply.into());
        self
    }

    fn reply(&self, messages: &[ChatMessage]) -> String {
        let all: String = messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or_default();

        if all.contains(kbgen::READER_MARKER) {
            if let Some(reply) = &self.reader_reply {
                return reply.clone();
            }
            return rule_reader_reply(kbgen::passage_from_prompt(&all).unwrap_or_default());
        }
        if all.contains(pipeline::DECOMPOSE_MARKER) {
            let question = field_after(last, "Question:").unwrap_or_default();
            if let Some(plan) = self.plans.get(question) {
                return plan.clone();
            }
            return serde_json::json!([{ "id": 1, "question": question, "depends_on": [] }]).to_string();
        }
        if all.contains(pipeline::SYNTHESIS_MARKER) {
            return last
                .lines()
                .filter_map(|l| l.strip_prefix("Sub-answer "))
                .filter_map(|l| l.split_once(": ").map(|(_, a)| a.trim().to_string()))
                .next_back()
                .unwrap_or_default();
        }
        if all.contains(pipeline::VANILLA_MARKER) {
            return last
                .lines()
                .filter_map(|l| l.strip_prefix("- Q: "))
                .filter_map(|l| l.split_once(" A: ").map(|(_, a)| a.trim().to_string()))
                .next()
                .unwrap_or_default();
        }
        if all.contains(eval::JUDGE_MARKER) {
            let pred = field_after(&all, "Prediction:").unwrap_or_default();
            let gold = field_after(&all, "Ground-truth Answer:").unwrap_or_default();
            let (pred, gold) = (eval::normalize_answer(pred), eval::normalize_answer(gold));
            let hit = !gold.is_empty() && (pred == gold || format!(" {pred} ").contains(&format!(" {gold} ")));
            return if hit { "yes" } else { "no" }.to_string();
        }
        last.lines().last().unwrap_or_default().to_string()
    }
}

impl ChatBackend for RuleChat {
    fn chat(&self, messages: &[ChatMessage], _temperature: f32) -> Result<ChatResponse, BackendError> {
        check_messages(messages)?;
        Ok(respond(messages, self.reply(messages)))
    }
}

fn field_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

const COPULAS: &[&str] = &[" is ", " was ", " are ", " were "];

/// One QA pair and one fact per sentence of `passage`. Answers are always
/// verbatim slices of the passage.
fn rule_reader_reply(passage: &str) -> String {
    let mut facts = Vec::new();
    let mut qa = Vec::new();
    for sentence in sentences(passage) {
        let body = sentence.trim_end_matches(['.', '!', '?']).trim();
        if body.is_empty() {
            continue;
        }
        facts.push(body.to_string());
        let split = COPULAS.iter().filter_map(|c| body.find(c).map(|pos| (pos, *c))).min_by_key(|(pos, _)| *pos);
        let (question, answer) = match split {
            Some((pos, copula)) => {
                let subject = lowercase_leading_stopword(&body[..pos]);
                (format!("What {} {}?", copula.trim(), subject), &body[pos + copula.len()..])
            }
            None => {
                let head: Vec<&str> = body.split_whitespace().take(4).collect();
                (format!("What is known about {}?", head.join(" ")), body)
            }
        };
        if !answer.trim().is_empty() {
            qa.push(serde_json::json!({ "question": question, "answer": answer }));
        }
    }
    let body = serde_json::json!({ "atomic_facts": facts, "qa": qa });
    format!("```json\n{}\n```", serde_json::to_string_pretty(&body).unwrap())
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        let boundary = matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace());
        if boundary {
            out.push(text[start..=i].trim());
            start = i + 1;
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(text[start..].trim());
    }
    out
}

fn lowercase_leading_stopword(subject: &str) -> String {
    let subject = subject.trim();
    match subject.split_once(' ') {
        Some((first, rest)) if is_stopword(&first.to_lowercase()) => format!("{} {}", first.to_lowercase(), rest),
        _ => subject.to_string(),
    }
}

/// Picks the candidate whose question shares the most content words with
/// the query, then narrows its answer to a short span.
///
/// Contexts are expected in the `Q: {question} A: {answer}` layout; a context
/// without it is treated as a bare answer. The score is the fraction of the
/// query's content words found in the candidate question, with a small bonus
/// when the answer's shape fits the question type. Ties go to the earlier
/// context.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapExtractor;

impl OverlapExtractor {
    pub fn new() -> Self {
        Self
    }

    /// Content-word overlap of `question` with the candidate question in
    /// `context`, as a fraction of the question's content words.
    pub fn overlap_score(question: &str, context: &str) -> f32 {
        let query = content_words(question);
        if query.is_empty() {
            return 0.0;
        }
        let (cand_q, _) = split_candidate(context);
        let cand = content_words(&context[cand_q]);
        query.intersection(&cand).count() as f32 / query.len() as f32
    }
}

/// Byte ranges of the question and answer parts of a `Q: .. A: ..` context.
fn split_candidate(context: &str) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let q_start = if context.starts_with("Q: ") { 3 } else { 0 };
    match context[q_start..].find(" A: ") {
        Some(pos) => (q_start..q_start + pos, q_start + pos + 4..context.len()),
        None => (0..0, 0..context.len()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum AnswerType {
    Place,
    Number,
    Name,
    Any,
}

fn answer_type(question: &str) -> AnswerType {
    let words = lower_words(question);
    let has = |w: &str| words.iter().any(|x| x == w);
    if has("country") || has("city") || has("where") || has("nation") || has("town") {
        AnswerType::Place
    } else if (has("how") && (has("many") || has("much") || has("tall") || has("long") || has("old")))
        || has("height")
        || has("year")
        || has("when")
    {
        AnswerType::Number
    } else if has("who") || has("whom") {
        AnswerType::Name
    } else {
        AnswerType::Any
    }
}

fn fits_type(kind: AnswerType, answer: &str) -> bool {
    let has_digit = answer.chars().any(|c| c.is_ascii_digit());
    let has_capital = word_tokens(answer).iter().any(|t| t.text.chars().next().is_some_and(char::is_uppercase));
    match kind {
        AnswerType::Place | AnswerType::Name => has_capital && !has_digit,
        AnswerType::Number => has_digit,
        AnswerType::Any => true,
    }
}

const TYPE_BONUS: f32 = 1e-3;

impl SpanExtractor for OverlapExtractor {
    fn extract_span(&self, question: &str, contexts: &[String]) -> Result<SpanResult, BackendError> {
        if contexts.is_empty() {
            return Err(BackendError::InvalidInput("extract_span needs at least one context".into()));
        }
        let kind = answer_type(question);
        let mut best: Option<(usize, f32, f32)> = None;
        for (i, context) in contexts.iter().enumerate() {
            let overlap = Self::overlap_score(question, context);
            let (_, answer) = split_candidate(context);
            let bonus = if fits_type(kind, &context[answer]) { TYPE_BONUS } else { 0.0 };
            let rank = overlap + bonus;
            if best.is_none_or(|(_, r, _)| rank > r) {
                best = Some((i, rank, overlap));
            }
        }
        let (index, _, overlap) = best.expect("contexts is non-empty");
        let context = &contexts[index];
        let (_, answer_range) = split_candidate(context);
        let tokens = word_tokens(context);
        let in_answer: Vec<usize> = (0..tokens.len())
            .filter(|&i| tokens[i].start >= answer_range.start && tokens[i].end <= answer_range.end)
            .collect();
        let Some((start, end)) = narrow_answer(question, kind, &tokens, &in_answer) else {
            return Ok(SpanResult { answer_text: String::new(), context_index: index, start: 0, end: 0, score: 0.0 });
        };
        Ok(SpanResult {
            answer_text: context[tokens[start].start..tokens[end].end].to_string(),
            context_index: index,
            start,
            end,
            score: overlap,
        })
    }
}

/// Trims restated question words and connectives from the front of the
/// answer, punctuation from both ends, and for place questions keeps one
/// comma-separated segment.
fn narrow_answer(question: &str, kind: AnswerType, tokens: &[Token<'_>], answer: &[usize]) -> Option<(usize, usize)> {
    let query_words = lower_words(question);
    let mut lo = 0;
    let mut hi = answer.len();
    let droppable = |t: &Token<'_>| {
        let w = t.text.to_lowercase();
        !t.is_word() || is_stopword(&w) || query_words.contains(&w)
    };
    while lo + 1 < hi && droppable(&tokens[answer[lo]]) {
        lo += 1;
    }
    while hi > lo + 1 && !tokens[answer[hi - 1]].is_word() {
        hi -= 1;
    }
    if lo >= hi || !tokens[answer[lo]].is_word() && hi - lo == 1 {
        return None;
    }
    let span = &answer[lo..hi];
    if kind == AnswerType::Place {
        let segments: Vec<&[usize]> = span.split(|&i| tokens[i].text == ",").filter(|s| !s.is_empty()).collect();
        if segments.len() > 1 {
            let words = lower_words(question);
            let pick = if words.iter().any(|w| w == "city" || w == "town") {
                segments[0]
            } else {
                segments[segments.len() - 1]
            };
            return Some((pick[0], pick[pick.len() - 1]));
        }
    }
    Some((span[0], span[span.len() - 1]))
}

const PRONOUNS: &[&str] = &["he", "she", "it", "they", "him", "her", "them"];
const POSSESSIVES: &[&str] = &["his", "its", "their"];

/// Replaces the first pronoun with the grounding entities (joined with
/// "and"); possessives become `Entity's`. With no pronoun, missing entities
/// are appended before the closing question mark.
#[derive(Debug, Clone, Copy, Default)]
pub struct PronounRewriter;

impl PronounRewriter {
    pub fn new() -> Self {
        Self
    }
}

impl Rewriter for PronounRewriter {
    fn rewrite(&self, question: &str, entities: &[String]) -> Result<RewriteResult, BackendError> {
        if question.trim().is_empty() {
            return Err(BackendError::InvalidInput("cannot rewrite an empty question".into()));
        }
        if entities.is_empty() {
            return Ok(RewriteResult { rewritten: question.to_string() });
        }
        let grounded = entities.join(" and ");
        let pronoun = word_tokens(question).into_iter().find(|t| {
            let w = t.text.to_lowercase();
            PRONOUNS.contains(&w.as_str()) || POSSESSIVES.contains(&w.as_str())
        });
        if let Some(tok) = pronoun {
            let replacement = if POSSESSIVES.contains(&tok.text.to_lowercase().as_str()) {
                format!("{grounded}'s")
            } else {
                grounded
            };
            let rewritten = format!("{}{}{}", &question[..tok.start], replacement, &question[tok.end..]);
            if entities.iter().all(|e| rewritten.contains(e.as_str())) {
                return Ok(RewriteResult { rewritten });
            }
        }
        let missing: Vec<&str> =
            entities.iter().filter(|e| !question.contains(e.as_str())).map(String::as_str).collect();
        if missing.is_empty() {
            return Ok(RewriteResult { rewritten: question.to_string() });
        }
        let stem = question.trim_end().trim_end_matches('?').trim_end();
        let mark = if question.trim_end().ends_with('?') { "?" } else { "" };
        Ok(RewriteResult { rewritten: format!("{stem} {}{mark}", missing.join(" ")) })
    }
}

/// True if `text` contains one of the pronouns the rewriter resolves.
pub fn has_pronoun(text: &str) -> bool {
    lower_words(text).iter().any(|w| PRONOUNS.contains(&w.as_str()) || POSSESSIVES.contains(&w.as_str()))
}
