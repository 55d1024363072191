use std::path::Path;

use anyhow::Context;
use serde_json::json;

use compactrag_core::eval::{self, BenchOptions};
use compactrag_core::kbgen::{self, KbBuildOptions};
use compactrag_core::{Mode, Pipeline, PipelineConfig, VectorIndex};

use crate::config::Settings;
use crate::services;

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

pub fn build_kb(settings: &Settings, corpus: &Path, out: &Path, corpus_id: Option<String>) -> anyhow::Result<bool> {
    let services = services::build(settings)?;
    let passages = kbgen::load_corpus(corpus)?;
    let corpus_id = corpus_id.unwrap_or_else(|| {
        corpus.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into())
    });
    let options = KbBuildOptions { concurrency: settings.concurrency, ..Default::default() };
    let build = kbgen::build_kb(&passages, &corpus_id, services.chat.as_ref(), services.annotator.as_ref(), options)?;
    kbgen::save_kb(&build.kb, out)?;
    let kb = &build.kb;
    print_json(&json!({
        "kb": out.display().to_string(),
        "passages": passages.len(),
        "skipped": build.report.skipped(),
        "pairs": kb.pairs.len(),
        "valid_pairs": kb.valid_pairs().count(),
        "facts": kb.facts.len(),
        "offline_token_cost": kb.offline_token_cost,
        "ledger": build.ledger,
    }));
    Ok(true)
}

pub fn index(settings: &Settings, kb: &Path, out: &Path) -> anyhow::Result<bool> {
    let services = services::build(settings)?;
    let kb = kbgen::load_kb(kb)?;
    let index = VectorIndex::build(&kb, services.embedder.as_ref(), settings.concurrency)?;
    index.save(out)?;
    print_json(&json!({ "index": out.display().to_string(), "entries": index.len(), "dim": index.dim() }));
    Ok(true)
}

struct Loaded {
    kb: compactrag_core::KnowledgeBase,
    index: VectorIndex,
}

fn load(kb: &Path, index: &Path) -> anyhow::Result<Loaded> {
    let kb = kbgen::load_kb(kb)?;
    let index = VectorIndex::load(index)?;
    if index.kb_ref() != kb.source_corpus_id {
        tracing::warn!(index = index.kb_ref(), kb = %kb.source_corpus_id, "index was built from a different knowledge base");
    }
    Ok(Loaded { kb, index })
}

fn config(settings: &Settings) -> PipelineConfig {
    PipelineConfig { k: settings.k, temperature: settings.temperature, ..Default::default() }
}

pub fn ask(
    settings: &Settings,
    kb: &Path,
    index: &Path,
    question: &str,
    mode: Mode,
    emit_evidence: bool,
) -> anyhow::Result<bool> {
    let services = services::build(settings)?;
    let loaded = load(kb, index)?;
    let pipeline = Pipeline::new(
        services.chat.as_ref(),
        services.embedder.as_ref(),
        services.extractor.as_ref(),
        services.rewriter.as_ref(),
        &loaded.kb,
        &loaded.index,
        config(settings),
    )?;
    let result = pipeline.answer_query("cli", question, mode)?;
    print_json(&result.to_json(emit_evidence));
    Ok(true)
}

pub fn eval(
    settings: &Settings,
    dataset: &Path,
    kb: &Path,
    index: &Path,
    mode: Mode,
    judge: bool,
    out: &Path,
) -> anyhow::Result<bool> {
    let services = services::build(settings)?;
    let loaded = load(kb, index)?;
    let items = eval::load_dataset(dataset)?;
    let pipeline = Pipeline::new(
        services.chat.as_ref(),
        services.embedder.as_ref(),
        services.extractor.as_ref(),
        services.rewriter.as_ref(),
        &loaded.kb,
        &loaded.index,
        config(settings),
    )?;
    let options =
        BenchOptions { mode, judge: judge.then_some(services.judge.as_ref()), concurrency: settings.concurrency };
    let run = eval::run_benchmark(&items, &pipeline, &options)?;
    eval::write_results(out, &run).with_context(|| format!("writing results to {}", out.display()))?;
    print_json(&serde_json::to_value(&run.report)?);
    if run.report.failed() {
        eprintln!("error: {} of {} items failed", run.report.failures, run.report.n);
        return Ok(false);
    }
    Ok(true)
}

pub fn report(results: &Path, offline_cost: Option<u64>, out: &Path) -> anyhow::Result<bool> {
    let records = eval::read_records(results)?;
    let offline_cost = match offline_cost {
        Some(c) => c,
        None => eval::read_summary(results)?.offline_cost,
    };
    let per_query: Vec<u64> = records.iter().map(|r| r.tokens).collect();
    let points = eval::token_curves(&per_query, offline_cost);
    std::fs::write(out, eval::curves_csv(&points)).with_context(|| format!("writing {}", out.display()))?;
    let last = points.last().expect("curve has an offline point");
    print_json(&json!({
        "curves": out.display().to_string(),
        "queries": per_query.len(),
        "offline_cost": offline_cost,
        "total_tokens": last.cumulative_tokens,
    }));
    Ok(true)
}
