//! Per-query accounting of backend calls and large-model tokens.
//!
//! Only chat calls carry tokens; embedder, extractor and rewriter calls are
//! counted but are not part of the token cost. Totals are always derived
//! from the per-stage entries, so they cannot drift apart.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::ChatResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Reader,
    Decompose,
    Retrieve,
    Extract,
    Rewrite,
    Synthesize,
    Vanilla,
    Judge,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub extractor_calls: u64,
    pub rewriter_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl StageUsage {
    fn add(&mut self, other: &StageUsage) {
        self.chat_calls += other.chat_calls;
        self.embed_calls += other.embed_calls;
        self.extractor_calls += other.extractor_calls;
        self.rewriter_calls += other.rewriter_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallLedger {
    stages: BTreeMap<Stage, StageUsage>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn stage(&mut self, stage: Stage) -> &mut StageUsage {
        self.stages.entry(stage).or_default()
    }

    pub fn record_chat(&mut self, stage: Stage, response: &ChatResponse) {
        let s = self.stage(stage);
        s.chat_calls += 1;
        s.prompt_tokens += response.prompt_tokens;
        s.completion_tokens += response.completion_tokens;
    }

    pub fn record_embed(&mut self, stage: Stage) {
        self.stage(stage).embed_calls += 1;
    }

    pub fn record_extract(&mut self) {
        self.stage(Stage::Extract).extractor_calls += 1;
    }

    pub fn record_rewrite(&mut self) {
        self.stage(Stage::Rewrite).rewriter_calls += 1;
    }

    /// Folds another ledger into this one.
    pub fn merge(&mut self, other: &CallLedger) {
        for (stage, usage) in &other.stages {
            self.stage(*stage).add(usage);
        }
    }

    pub fn per_stage(&self) -> &BTreeMap<Stage, StageUsage> {
        &self.stages
    }

    pub fn usage(&self, stage: Stage) -> StageUsage {
        self.stages.get(&stage).copied().unwrap_or_default()
    }

    fn totals(&self) -> StageUsage {
        let mut t = StageUsage::default();
        for u in self.stages.values() {
            t.add(u);
        }
        t
    }

    pub fn chat_calls(&self) -> u64 {
        self.totals().chat_calls
    }

    pub fn embed_calls(&self) -> u64 {
        self.totals().embed_calls
    }

    pub fn extractor_calls(&self) -> u64 {
        self.totals().extractor_calls
    }

    pub fn rewriter_calls(&self) -> u64 {
        self.totals().rewriter_calls
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.totals().prompt_tokens
    }

    pub fn completion_tokens(&self) -> u64 {
        self.totals().completion_tokens
    }

    pub fn total_tokens(&self) -> u64 {
        let t = self.totals();
        t.prompt_tokens + t.completion_tokens
    }

    /// Tokens spent in every stage except `excluded`.
    pub fn tokens_excluding(&self, excluded: Stage) -> u64 {
        self.stages.iter().filter(|(s, _)| **s != excluded).map(|(_, u)| u.prompt_tokens + u.completion_tokens).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    chat_calls: u64,
    extractor_calls: u64,
    rewriter_calls: u64,
    embed_calls: u64,
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
    per_stage: BTreeMap<Stage, StageUsage>,
}

impl Serialize for CallLedger {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let t = self.totals();
        LedgerRepr {
            chat_calls: t.chat_calls,
            extractor_calls: t.extractor_calls,
            rewriter_calls: t.rewriter_calls,
            embed_calls: t.embed_calls,
            prompt_tokens: t.prompt_tokens,
            completion_tokens: t.completion_tokens,
            total_tokens: t.prompt_tokens + t.completion_tokens,
            per_stage: self.stages.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CallLedger {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = LedgerRepr::deserialize(deserializer)?;
        let ledger = CallLedger { stages: repr.per_stage };
        let t = ledger.totals();
        if t.chat_calls != repr.chat_calls
            || t.prompt_tokens != repr.prompt_tokens
            || t.completion_tokens != repr.completion_tokens
            || repr.total_tokens != t.prompt_tokens + t.completion_tokens
        {
            return Err(serde::de::Error::custom("ledger totals disagree with per-stage entries"));
        }
        Ok(ledger)
    }
}
