//! Exact dense retrieval over valid QA pairs.
//!
//! Each pair is embedded as `question + " " + answer` and stored unit-length,
//! so cosine similarity is a dot product. Search is exhaustive; ties are
//! broken by insertion order, earlier first.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, EmbeddingVector};
use crate::kbgen::{KnowledgeBase, QaPair};

pub const INDEX_FORMAT_VERSION: &str = "1";
pub const DEFAULT_K: usize = 5;
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("no valid pairs to index")]
    NoValidPairs,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty query")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedder returned a zero vector for {0:?}")]
    ZeroVector(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported index version {0:?}")]
    Version(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub qa_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalResult<'a> {
    pub qa_id: &'a str,
    /// Position of the entry in the index.
    pub position: usize,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    kb_ref: String,
    dim: usize,
    entries: Vec<IndexEntry>,
}

fn unit(vector: EmbeddingVector, what: &str) -> Result<EmbeddingVector, IndexError> {
    vector.normalized().ok_or_else(|| IndexError::ZeroVector(what.to_string()))
}

/// Embeds one pair as `[q; a]` and normalizes it.
pub fn encode_pair(pair: &QaPair, embedder: &dyn Embedder) -> Result<EmbeddingVector, IndexError> {
    if pair.question.trim().is_empty() && pair.answer.trim().is_empty() {
        return Err(IndexError::Config(format!("pair {} is empty", pair.qa_id)));
    }
    let text = pair.encoded_text();
    let vector = embedder
        .embed(std::slice::from_ref(&text))?
        .pop()
        .ok_or_else(|| IndexError::Backend(BackendError::Protocol("embedder returned no vectors".into())))?;
    unit(vector, &text)
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    score: f32,
    position: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    /// Greater means ranked earlier: higher score, then lower position.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.position.cmp(&self.position))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl VectorIndex {
    /// Indexes every valid pair of `kb`, in KB order. Embedding runs in
    /// batches across `concurrency` threads.
    pub fn build(kb: &KnowledgeBase, embedder: &dyn Embedder, concurrency: usize) -> Result<Self, IndexError> {
        let pairs: Vec<&QaPair> = kb.valid_pairs().collect();
        if pairs.is_empty() {
            return Err(IndexError::NoValidPairs);
        }
        let texts: Vec<String> = pairs.iter().map(|p| p.encoded_text()).collect();
        let batches: Vec<&[String]> = texts.chunks(EMBED_BATCH).collect();
        let embed = |batch: &&[String]| embedder.embed(batch);
        let results: Vec<Result<Vec<EmbeddingVector>, BackendError>> = if concurrency <= 1 {
            batches.iter().map(embed).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(concurrency)
                .build()
                .map_err(|e| IndexError::Config(format!("thread pool: {e}")))?;
            pool.install(|| batches.par_iter().map(embed).collect())
        };
        let mut vectors = Vec::with_capacity(texts.len());
        for r in results {
            vectors.extend(r?);
        }
        if vectors.len() != texts.len() {
            return Err(IndexError::Backend(BackendError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                vectors.len()
            ))));
        }
        let dim = embedder.dim();
        let mut entries = Vec::with_capacity(pairs.len());
        for ((pair, vector), text) in pairs.iter().zip(vectors).zip(&texts) {
            if vector.dim() != dim {
                return Err(IndexError::Config(format!(
                    "mixed dimensions: {} has {} but the embedder reports {dim}",
                    pair.qa_id,
                    vector.dim()
                )));
            }
            entries.push(IndexEntry { qa_id: pair.qa_id.clone(), vector: unit(vector, text)? });
        }
        Self::from_entries(kb.source_corpus_id.clone(), dim, entries)
    }

    pub fn from_entries(kb_ref: String, dim: usize, entries: Vec<IndexEntry>) -> Result<Self, IndexError> {
        let mut ids = HashSet::new();
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(IndexError::Config(format!(
                    "entry {} has dimension {}, index has {dim}",
                    e.qa_id,
                    e.vector.dim()
                )));
            }
            if !ids.insert(e.qa_id.as_str()) {
                return Err(IndexError::Config(format!("duplicate qa_id {}", e.qa_id)));
            }
        }
        Ok(Self { kb_ref, dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kb_ref(&self) -> &str {
        &self.kb_ref
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embeds `query` and returns the top `k` entries by cosine similarity.
    pub fn search(
        &self,
        query: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<RetrievalResult<'_>>, IndexError> {
        if query.trim().is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if embedder.dim() != self.dim {
            return Err(IndexError::Config(format!(
                "embedder dimension {} does not match index dimension {}",
                embedder.dim(),
                self.dim
            )));
        }
        let vector = embedder
            .embed(&[query.to_string()])?
            .pop()
            .ok_or_else(|| IndexError::Backend(BackendError::Protocol("embedder returned no vectors".into())))?;
        let vector = unit(vector, query)?;
        self.search_vector(&vector, k)
    }

    /// Top `k` by dot product with an already-normalized query vector.
    pub fn search_vector(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalResult<'_>>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::Config(format!(
                "query dimension {} does not match index dimension {}",
                query.dim(),
                self.dim
            )));
        }
        let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
        for (position, entry) in self.entries.iter().enumerate() {
            let cand = Candidate { score: query.dot(&entry.vector), position };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if heap.peek().is_some_and(|Reverse(worst)| cand > *worst) {
                heap.pop();
                heap.push(Reverse(cand));
            }
        }
        let ranked = heap.into_sorted_vec();
        Ok(ranked
            .into_iter()
            .map(|Reverse(c)| RetrievalResult {
                qa_id: &self.entries[c.position].qa_id,
                position: c.position,
                score: c.score,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |e| IndexError::Io { path: path.to_path_buf(), source: e };
        let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        let header = IndexHeader { version: INDEX_FORMAT_VERSION.into(), dim: self.dim, kb_ref: self.kb_ref.clone() };
        writeln!(file, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        for e in &self.entries {
            writeln!(file, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(io)?;
        }
        file.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let raw = fs::read_to_string(path).map_err(|e| IndexError::Io { path: path.to_path_buf(), source: e })?;
        let mut lines = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(IndexError::Format { line: 1, message: "missing header".into() })?;
        let header: IndexHeader =
            serde_json::from_str(first).map_err(|e| IndexError::Format { line: 1, message: e.to_string() })?;
        if header.version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Version(header.version));
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let entry: IndexEntry =
                serde_json::from_str(line).map_err(|e| IndexError::Format { line: i + 1, message: e.to_string() })?;
            entries.push(entry);
        }
        Self::from_entries(header.kb_ref, header.dim, entries)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    version: String,
    dim: usize,
    kb_ref: String,
}
