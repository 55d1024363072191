//! HTTP backends: an OpenAI-compatible chat/embeddings client and a client
//! for the model sidecar that serves the extractor, rewriter and annotator.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    check_messages, check_texts, count_prompt_tokens, count_tokens, BackendError, ChatBackend, ChatMessage,
    ChatResponse, Embedder, EmbeddingVector, EntityAnnotator, EntityMention, RetryPolicy, RewriteResult, Rewriter,
    SpanExtractor, SpanResult,
};

/// Environment variable holding the bearer token for the chat/embedding API.
pub const API_KEY_ENV: &str = "COMPACTRAG_API_KEY";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
struct JsonPoster {
    base_url: String,
    api_key: Option<String>,
    client: Client,
    retry: RetryPolicy,
}

impl JsonPoster {
    fn new(base_url: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<Self, BackendError> {
        let parsed = reqwest::Url::parse(base_url)
            .map_err(|e| BackendError::Config(format!("bad base url {base_url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(BackendError::Config(format!("unsupported url scheme in {base_url:?}")));
        }
        let client =
            Client::builder().timeout(DEFAULT_TIMEOUT).build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { base_url: base_url.trim_end_matches('/').to_string(), api_key, client, retry })
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        self.retry.run(|| {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
            let status = resp.status();
            let text = resp.text().map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(BackendError::Transport(format!("{url}: HTTP {status}")));
            }
            if !status.is_success() {
                return Err(BackendError::Protocol(format!("{url}: HTTP {status}: {}", truncate(&text, 200))));
            }
            serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("{url}: unparseable body ({e}): {}", truncate(&text, 200))))
        })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Chat client for `POST {base_url}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct OpenAiChat {
    http: JsonPoster,
    model: String,
}

impl OpenAiChat {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<Self, BackendError> {
        Ok(Self { http: JsonPoster::new(base_url, api_key, retry)?, model: model.to_string() })
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str) -> Result<Self, BackendError> {
        Self::new(base_url, model, std::env::var(API_KEY_ENV).ok(), RetryPolicy::default())
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for OpenAiChat {
    fn chat(&self, messages: &[ChatMessage], temperature: f32) -> Result<ChatResponse, BackendError> {
        check_messages(messages)?;
        let body = json!({ "model": self.model, "messages": messages, "temperature": temperature });
        let parsed: CompletionBody = self.http.post("/v1/chat/completions", &body)?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("response has no choices[0].message.content".into()))?;
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (count_prompt_tokens(messages), count_tokens(&text)),
        };
        Ok(ChatResponse { text, prompt_tokens, completion_tokens })
    }
}

/// Embedding client for `POST {base_url}/v1/embeddings`.
#[derive(Debug, Clone)]
pub struct OpenAiEmbedder {
    http: JsonPoster,
    model: String,
    dim: usize,
}

impl OpenAiEmbedder {
    /// `dim` is the dimension the model is expected to return; every response
    /// is checked against it.
    pub fn new(
        base_url: &str,
        model: &str,
        dim: usize,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        if dim == 0 {
            return Err(BackendError::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { http: JsonPoster::new(base_url, api_key, retry)?, model: model.to_string(), dim })
    }
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

impl Embedder for OpenAiEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_texts(texts)?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.model, "input": texts });
        let parsed: EmbeddingBody = self.http.post("/v1/embeddings", &body)?;
        if parsed.data.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut items = parsed.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        items
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dim {
                    return Err(BackendError::Config(format!(
                        "embedding dimension {} does not match configured {}",
                        item.embedding.len(),
                        self.dim
                    )));
                }
                Ok(EmbeddingVector::new(item.embedding))
            })
            .collect()
    }
}

/// Client for the model sidecar (`/extract`, `/rewrite`, `/entities`).
#[derive(Debug, Clone)]
pub struct SidecarClient {
    http: JsonPoster,
}

impl SidecarClient {
    pub fn new(base_url: &str, retry: RetryPolicy) -> Result<Self, BackendError> {
        Ok(Self { http: JsonPoster::new(base_url, None, retry)? })
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    question: &'a str,
    contexts: &'a [String],
}

#[derive(Deserialize)]
struct ExtractReply {
    answer: String,
    context_index: usize,
    start: usize,
    end: usize,
    score: f32,
}

#[derive(Deserialize)]
struct RewriteReply {
    rewritten: String,
}

#[derive(Deserialize)]
struct EntitiesReply {
    mentions: Vec<EntityMention>,
}

impl SpanExtractor for SidecarClient {
    fn extract_span(&self, question: &str, contexts: &[String]) -> Result<SpanResult, BackendError> {
        if contexts.is_empty() {
            return Err(BackendError::InvalidInput("extract_span needs at least one context".into()));
        }
        let body = serde_json::to_value(ExtractRequest { question, contexts }).expect("serializable");
        let reply: ExtractReply = self.http.post("/extract", &body)?;
        let span = SpanResult {
            answer_text: reply.answer,
            context_index: reply.context_index,
            start: reply.start,
            end: reply.end,
            score: reply.score,
        };
        if !span.answer_text.is_empty() && !span.matches_contexts(contexts) {
            return Err(BackendError::Protocol(format!(
                "extractor span {}..={} of context {} does not slice to {:?}",
                span.start, span.end, span.context_index, span.answer_text
            )));
        }
        Ok(span)
    }
}

impl Rewriter for SidecarClient {
    fn rewrite(&self, question: &str, entities: &[String]) -> Result<RewriteResult, BackendError> {
        if question.trim().is_empty() {
            return Err(BackendError::InvalidInput("cannot rewrite an empty question".into()));
        }
        let reply: RewriteReply = self.http.post("/rewrite", &json!({ "question": question, "entities": entities }))?;
        Ok(RewriteResult { rewritten: reply.rewritten })
    }
}

impl EntityAnnotator for SidecarClient {
    fn annotate(&self, passage_text: &str) -> Result<Vec<EntityMention>, BackendError> {
        let reply: EntitiesReply = self.http.post("/entities", &json!({ "text": passage_text }))?;
        let mut mentions = reply.mentions;
        for m in &mentions {
            if passage_text.get(m.char_start..m.char_end) != Some(m.surface.as_str()) {
                return Err(BackendError::Protocol(format!(
                    "mention {:?} at {}..{} does not match the passage",
                    m.surface, m.char_start, m.char_end
                )));
            }
        }
        mentions.sort_by_key(|m| (m.char_start, m.char_end));
        Ok(mentions)
    }
}
