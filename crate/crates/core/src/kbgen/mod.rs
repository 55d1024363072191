//! Offline stage: corpus in, atomic QA knowledge base out.
//!
//! Each passage is annotated with entities, sent to the reader model once
//! (plus bounded retries when the reply does not parse), and the returned QA
//! pairs are checked against the passage. Pairs whose answer is not a
//! verbatim substring are kept with `valid = false` so reader quality can be
//! audited; only valid pairs are indexed.

mod parse;
mod prompt;
mod store;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, EntityAnnotator, EntityMention};
use crate::ledger::{CallLedger, Stage};

pub use parse::{first_fenced_block, parse_reader_output};
pub use prompt::{
    build_reader_prompt, entity_info, passage_from_prompt, reader_prompt_prefix, EXAMPLE_ENTITIES, EXAMPLE_PASSAGE,
    EXAMPLE_READER_OUTPUT, READER_MARKER,
};
pub use store::{kb_from_str, kb_to_string, load_kb, save_kb, KB_FORMAT_VERSION};

/// Questions longer than this are kept but logged.
pub const MAX_QUESTION_WORDS: usize = 12;

const QUESTION_WORDS: &[&str] = &["who", "what", "when", "where", "which", "how", "whom", "whose", "why"];

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus line {line}: {message}")]
    CorpusLine { line: usize, message: String },
    #[error("duplicate passage id at line {line}: {id}")]
    DuplicatePassage { line: usize, id: String },
    #[error("unparseable reader output: {0}")]
    ReaderOutput(String),
    #[error("knowledge base file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported knowledge base version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("aborted: {skipped} of {total} passages skipped ({summary})")]
    TooManySkipped { skipped: usize, total: usize, summary: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl KbError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KbError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub passage_id: String,
    pub statement: String,
}

/// A QA pair as the reader returned it, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDraft {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub qa_id: String,
    pub passage_id: String,
    pub question: String,
    pub answer: String,
    pub entities: Vec<String>,
    pub valid: bool,
}

impl QaPair {
    /// The text that gets embedded: question and answer joined by one space.
    pub fn encoded_text(&self) -> String {
        format!("{} {}", self.question, self.answer)
    }

    /// The layout the span extractor sees for this pair.
    pub fn candidate_text(&self) -> String {
        format!("Q: {} A: {}", self.question, self.answer)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub source_corpus_id: String,
    pub offline_token_cost: u64,
    pub pairs: Vec<QaPair>,
    pub facts: Vec<AtomicFact>,
}

impl KnowledgeBase {
    pub fn valid_pairs(&self) -> impl Iterator<Item = &QaPair> {
        self.pairs.iter().filter(|p| p.valid)
    }

    pub fn pair(&self, qa_id: &str) -> Option<&QaPair> {
        self.pairs.iter().find(|p| p.qa_id == qa_id)
    }
}

/// Reads a JSONL corpus, one `{"id","title","text"}` object per line.
/// Blank lines are ignored; CRLF endings are accepted.
pub fn load_corpus(path: &Path) -> Result<Vec<Passage>, KbError> {
    let raw = fs::read_to_string(path).map_err(|e| KbError::io(path, e))?;
    parse_corpus(&raw)
}

pub fn parse_corpus(raw: &str) -> Result<Vec<Passage>, KbError> {
    let mut seen = HashSet::new();
    let mut passages = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage =
            serde_json::from_str(line).map_err(|e| KbError::CorpusLine { line: line_no, message: e.to_string() })?;
        if passage.text.trim().is_empty() {
            return Err(KbError::CorpusLine { line: line_no, message: "passage text is empty".into() });
        }
        if !seen.insert(passage.id.clone()) {
            return Err(KbError::DuplicatePassage { line: line_no, id: passage.id });
        }
        passages.push(passage);
    }
    Ok(passages)
}

fn looks_like_question(q: &str) -> bool {
    let q = q.trim();
    let first = q.split_whitespace().next().unwrap_or_default().to_lowercase();
    q.ends_with('?') || QUESTION_WORDS.contains(&first.as_str())
}

/// Turns a draft into a stored pair. `valid` is true iff the answer is a
/// non-blank verbatim substring of the passage text. Style problems
/// (long questions, no question form) are logged only.
pub fn validate_pair(draft: &QaDraft, passage: &Passage, qa_id: String, mentions: &[EntityMention]) -> QaPair {
    let valid = !draft.answer.trim().is_empty() && passage.text.contains(draft.answer.as_str());
    let words = draft.question.split_whitespace().count();
    if words > MAX_QUESTION_WORDS {
        tracing::warn!(passage = %passage.id, words, question = %draft.question, "reader question longer than {MAX_QUESTION_WORDS} words");
    }
    if !looks_like_question(&draft.question) {
        tracing::warn!(passage = %passage.id, question = %draft.question, "reader question is not phrased as a question");
    }
    if !valid {
        tracing::warn!(passage = %passage.id, answer = %draft.answer, "reader answer is not a verbatim substring of the passage");
    }
    let mut entities: Vec<String> = Vec::new();
    for m in mentions {
        let hit = draft.question.contains(m.surface.as_str()) || draft.answer.contains(m.surface.as_str());
        if hit && !entities.contains(&m.surface) {
            entities.push(m.surface.clone());
        }
    }
    // "Lilli" inside "Lilli's Marriage" is not a separate entity.
    let all = entities.clone();
    entities.retain(|e| !all.iter().any(|o| o.len() > e.len() && o.contains(e.as_str())));
    QaPair {
        qa_id,
        passage_id: passage.id.clone(),
        question: draft.question.clone(),
        answer: draft.answer.clone(),
        entities,
        valid,
    }
}

fn question_key(q: &str) -> String {
    q.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KbBuildOptions {
    /// Passages processed at once.
    pub concurrency: usize,
    /// Extra reader calls allowed when a reply does not parse.
    pub parse_retries: u32,
}

impl Default for KbBuildOptions {
    fn default() -> Self {
        Self { concurrency: 1, parse_retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassageReport {
    pub passage_id: String,
    /// Reader calls made, retries included.
    pub attempts: u32,
    pub pairs: usize,
    pub invalid_pairs: usize,
    pub duplicates_dropped: usize,
    pub skipped: Option<String>,
}

impl PassageReport {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub passages: Vec<PassageReport>,
}

impl BuildReport {
    pub fn skipped(&self) -> usize {
        self.passages.iter().filter(|p| p.skipped.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct KbBuild {
    pub kb: KnowledgeBase,
    pub report: BuildReport,
    pub ledger: CallLedger,
}

struct PassageOutcome {
    pairs: Vec<QaPair>,
    facts: Vec<AtomicFact>,
    ledger: CallLedger,
    report: PassageReport,
}

fn process_passage(
    passage: &Passage,
    reader: &dyn ChatBackend,
    annotator: &dyn EntityAnnotator,
    parse_retries: u32,
) -> PassageOutcome {
    let mut ledger = CallLedger::new();
    let mut report = PassageReport {
        passage_id: passage.id.clone(),
        attempts: 0,
        pairs: 0,
        invalid_pairs: 0,
        duplicates_dropped: 0,
        skipped: None,
    };
    let skip = |ledger, mut report: PassageReport, reason: String| {
        tracing::warn!(passage = %report.passage_id, %reason, "skipping passage");
        report.skipped = Some(reason);
        PassageOutcome { pairs: Vec::new(), facts: Vec::new(), ledger, report }
    };

    let mentions = match annotator.annotate(&passage.text) {
        Ok(m) => m,
        Err(e) => return skip(ledger, report, format!("entity annotation failed: {e}")),
    };
    let messages = [ChatMessage::user(build_reader_prompt(passage, &mentions))];

    let mut parsed = None;
    let mut last_error = String::new();
    for _ in 0..=parse_retries {
        report.attempts += 1;
        let response = match reader.chat(&messages, 0.0) {
            Ok(r) => r,
            Err(e) => return skip(ledger, report, format!("reader call failed: {e}")),
        };
        ledger.record_chat(Stage::Reader, &response);
        match parse_reader_output(&response.text) {
            Ok(out) => {
                parsed = Some(out);
                break;
            }
            Err(e) => {
                tracing::warn!(passage = %passage.id, attempt = report.attempts, error = %e, "reader output did not parse");
                last_error = e.to_string();
            }
        }
    }
    if report.attempts > 1 {
        tracing::info!(passage = %passage.id, retries = report.attempts - 1, "reader retries used");
    }
    let Some((facts, drafts)) = parsed else {
        let reason = format!("no parseable reader output after {} attempts: {last_error}", report.attempts);
        return skip(ledger, report, reason);
    };

    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for draft in drafts {
        if !seen.insert(question_key(&draft.question)) {
            report.duplicates_dropped += 1;
            continue;
        }
        let qa_id = format!("{}#{}", passage.id, pairs.len());
        let pair = validate_pair(&draft, passage, qa_id, &mentions);
        if !pair.valid {
            report.invalid_pairs += 1;
        }
        pairs.push(pair);
    }
    report.pairs = pairs.len();
    let facts = facts.into_iter().map(|f| AtomicFact { passage_id: passage.id.clone(), ..f }).collect();
    PassageOutcome { pairs, facts, ledger, report }
}

/// Builds the knowledge base. Output order is corpus order, then the
/// reader's generation order, regardless of `concurrency`.
pub fn build_kb(
    corpus: &[Passage],
    corpus_id: &str,
    reader: &dyn ChatBackend,
    annotator: &dyn EntityAnnotator,
    options: KbBuildOptions,
) -> Result<KbBuild, KbError> {
    let run = |p: &Passage| process_passage(p, reader, annotator, options.parse_retries);
    let outcomes: Vec<PassageOutcome> = if options.concurrency <= 1 {
        corpus.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency)
            .build()
            .map_err(|e| BackendError::Config(format!("thread pool: {e}")))?;
        pool.install(|| corpus.par_iter().map(run).collect())
    };

    let mut kb = KnowledgeBase { source_corpus_id: corpus_id.to_string(), ..Default::default() };
    let mut ledger = CallLedger::new();
    let mut report = BuildReport::default();
    for outcome in outcomes {
        ledger.merge(&outcome.ledger);
        kb.pairs.extend(outcome.pairs);
        kb.facts.extend(outcome.facts);
        report.passages.push(outcome.report);
    }
    kb.offline_token_cost = ledger.total_tokens();

    let skipped = report.skipped();
    if skipped * 2 > corpus.len() {
        let summary = report
            .passages
            .iter()
            .filter_map(|p| p.skipped.as_ref().map(|why| format!("{}: {why}", p.passage_id)))
            .take(5)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(KbError::TooManySkipped { skipped, total: corpus.len(), summary });
    }
    Ok(KbBuild { kb, report, ledger })
}
