use anyhow::Context;

use compactrag_core::backends::entities::RuleAnnotator;
use compactrag_core::backends::http::{OpenAiChat, OpenAiEmbedder, SidecarClient, API_KEY_ENV};
use compactrag_core::backends::mock::{MockEmbedder, OverlapExtractor, PronounRewriter, RuleChat};
use compactrag_core::backends::{ChatBackend, Embedder, EntityAnnotator, RetryPolicy, Rewriter, SpanExtractor};

use crate::config::{BackendKind, Settings};
use crate::UsageError;

/// The model-facing components a command may need.
pub struct Services {
    pub chat: Box<dyn ChatBackend>,
    pub embedder: Box<dyn Embedder>,
    pub extractor: Box<dyn SpanExtractor>,
    pub rewriter: Box<dyn Rewriter>,
    pub annotator: Box<dyn EntityAnnotator>,
    pub judge: Box<dyn ChatBackend>,
}

fn required<'a>(value: &'a Option<String>, key: &str) -> Result<&'a str, UsageError> {
    value.as_deref().ok_or_else(|| UsageError(format!("the http backend needs `{key}` in the config file")))
}

pub fn build(settings: &Settings) -> anyhow::Result<Services> {
    match settings.backend {
        BackendKind::Mock => mock(settings),
        BackendKind::Http => http(settings),
    }
}

fn mock(settings: &Settings) -> anyhow::Result<Services> {
    let mut chat = RuleChat::new();
    if let Some(path) = &settings.mock_plans {
        let raw =
            std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| UsageError(format!("{} line {}: {e}", path.display(), i + 1)))?;
            let question = v["question"]
                .as_str()
                .ok_or_else(|| UsageError(format!("{} line {}: no question", path.display(), i + 1)))?;
            chat.add_plan(question, v["plan"].to_string());
        }
    }
    Ok(Services {
        judge: Box::new(chat.clone()),
        chat: Box::new(chat),
        embedder: Box::new(MockEmbedder::new(settings.embed_dim, settings.seed)),
        extractor: Box::new(OverlapExtractor),
        rewriter: Box::new(PronounRewriter),
        annotator: Box::new(RuleAnnotator),
    })
}

fn http(settings: &Settings) -> anyhow::Result<Services> {
    let key = std::env::var(API_KEY_ENV).ok();
    let retry = RetryPolicy::default();
    let chat_url = required(&settings.chat_url, "chat_url")?;
    let embed_url = settings.embed_url.as_deref().unwrap_or(chat_url);
    let sidecar =
        SidecarClient::new(required(&settings.sidecar_url, "sidecar_url")?, retry).context("sidecar client")?;
    let chat = OpenAiChat::new(chat_url, &settings.chat_model, key.clone(), retry).context("chat client")?;
    let judge = OpenAiChat::new(
        settings.judge_url.as_deref().unwrap_or(chat_url),
        settings.judge_model.as_deref().unwrap_or(&settings.chat_model),
        key.clone(),
        retry,
    )
    .context("judge client")?;
    let embedder = OpenAiEmbedder::new(embed_url, &settings.embed_model, settings.embed_dim, key, retry)
        .context("embedding client")?;
    Ok(Services {
        chat: Box::new(chat),
        embedder: Box::new(embedder),
        extractor: Box::new(sidecar.clone()),
        rewriter: Box::new(sidecar.clone()),
        annotator: Box::new(sidecar),
        judge: Box::new(judge),
    })
}
