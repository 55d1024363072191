//! Multi-hop question answering over an atomic QA knowledge base.
//!
//! Offline, [`kbgen`] turns a passage corpus into question-answer pairs and
//! [`index`] embeds them. Online, [`pipeline`] answers a question with two
//! chat calls; [`eval`] scores runs and tracks their token cost.

pub mod backends;
pub mod eval;
pub mod index;
pub mod kbgen;
pub mod ledger;
pub mod pipeline;

pub use backends::{
    BackendError, ChatBackend, ChatMessage, ChatResponse, Embedder, EmbeddingVector, EntityAnnotator, EntityMention,
    RewriteResult, Rewriter, SpanExtractor, SpanResult,
};
pub use eval::{DatasetItem, ItemRecord, MetricReport, TokenCurvePoint};
pub use index::{RetrievalResult, VectorIndex};
pub use kbgen::{AtomicFact, KnowledgeBase, Passage, QaPair};
pub use ledger::{CallLedger, Stage};
pub use pipeline::{EvidenceBundle, Mode, Pipeline, PipelineConfig, QueryResult};
