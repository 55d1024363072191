use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::judge::{llm_judge, Verdict};
use super::metrics::{exact_match, f1_score};
use crate::backends::ChatBackend;
use crate::ledger::CallLedger;
use crate::pipeline::{Mode, Pipeline};

/// A run with more failed items than this fraction is a failed run.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("results: {0}")]
    Results(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
}

pub fn parse_dataset(raw: &str) -> Result<Vec<DatasetItem>, EvalError> {
    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem =
            serde_json::from_str(line).map_err(|e| EvalError::Dataset { line: line_no, message: e.to_string() })?;
        if item.id.trim().is_empty() || item.question.trim().is_empty() || item.gold_answer.trim().is_empty() {
            return Err(EvalError::Dataset { line: line_no, message: "empty field".into() });
        }
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::Dataset { line: line_no, message: format!("duplicate id {}", item.id) });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, EvalError> {
    parse_dataset(&fs::read_to_string(path).map_err(io_err(path))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    pub em: u8,
    pub f1: f64,
    /// `None` when no judge ran; otherwise the verdict, unscored included.
    pub judge: Option<Verdict>,
    /// Inference tokens only; judge tokens never land here.
    pub tokens: u64,
    pub ledger: CallLedger,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub acc: Option<f64>,
    pub unscored: usize,
    pub avg_tokens_per_query: f64,
    pub offline_cost: u64,
    pub mode: Mode,
    pub failures: usize,
    pub judge_tokens: u64,
}

impl MetricReport {
    pub fn failed(&self) -> bool {
        self.n > 0 && self.failures as f64 > MAX_FAILURE_RATE * self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub report: MetricReport,
    pub records: Vec<ItemRecord>,
    pub judge_ledger: CallLedger,
}

pub struct BenchOptions<'a> {
    pub mode: Mode,
    pub judge: Option<&'a dyn ChatBackend>,
    pub concurrency: usize,
}

fn run_item(item: &DatasetItem, pipeline: &Pipeline<'_>, options: &BenchOptions<'_>) -> (ItemRecord, CallLedger) {
    let mut judge_ledger = CallLedger::new();
    match pipeline.answer_query(&item.id, &item.question, options.mode) {
        Ok(result) => {
            let judge = options.judge.map(|chat| {
                llm_judge(&item.question, &result.answer, &item.gold_answer, chat, &mut judge_ledger).unwrap_or_else(
                    |e| {
                        tracing::warn!(id = %item.id, error = %e, "judge call failed");
                        Verdict::Unscored(format!("error: {e}"))
                    },
                )
            });
            let record = ItemRecord {
                id: item.id.clone(),
                question: item.question.clone(),
                gold: item.gold_answer.clone(),
                em: exact_match(&result.answer, &item.gold_answer),
                f1: f1_score(&result.answer, &item.gold_answer),
                prediction: result.answer,
                judge,
                tokens: result.ledger.total_tokens(),
                ledger: result.ledger,
                error: None,
            };
            (record, judge_ledger)
        }
        Err(e) => {
            tracing::warn!(id = %item.id, error = %e, "item failed");
            let record = ItemRecord {
                id: item.id.clone(),
                question: item.question.clone(),
                gold: item.gold_answer.clone(),
                prediction: String::new(),
                em: 0,
                f1: 0.0,
                judge: None,
                tokens: 0,
                ledger: CallLedger::new(),
                error: Some(e.to_string()),
            };
            (record, judge_ledger)
        }
    }
}

/// Answers every item and aggregates. Records come back in dataset order
/// whatever the concurrency.
pub fn run_benchmark(
    items: &[DatasetItem],
    pipeline: &Pipeline<'_>,
    options: &BenchOptions<'_>,
) -> Result<BenchmarkRun, EvalError> {
    let outcomes: Vec<(ItemRecord, CallLedger)> = if options.concurrency <= 1 {
        items.iter().map(|item| run_item(item, pipeline, options)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| items.par_iter().map(|item| run_item(item, pipeline, options)).collect())
    };
    let mut judge_ledger = CallLedger::new();
    let mut records = Vec::with_capacity(outcomes.len());
    for (record, ledger) in outcomes {
        judge_ledger.merge(&ledger);
        records.push(record);
    }
    let report = summarize(&records, pipeline.kb.offline_token_cost, options.mode, judge_ledger.total_tokens());
    Ok(BenchmarkRun { report, records, judge_ledger })
}

pub fn summarize(records: &[ItemRecord], offline_cost: u64, mode: Mode, judge_tokens: u64) -> MetricReport {
    let n = records.len();
    let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
    let verdicts: Vec<Option<bool>> = records.iter().filter_map(|r| r.judge.as_ref()).map(Verdict::as_bool).collect();
    let scored: Vec<bool> = verdicts.iter().flatten().copied().collect();
    let acc =
        if scored.is_empty() { None } else { Some(scored.iter().filter(|v| **v).count() as f64 / scored.len() as f64) };
    MetricReport {
        n,
        em: mean(records.iter().map(|r| f64::from(r.em)).sum()),
        f1: mean(records.iter().map(|r| r.f1).sum()),
        acc,
        unscored: verdicts.len() - scored.len(),
        avg_tokens_per_query: mean(records.iter().map(|r| r.tokens as f64).sum()),
        offline_cost,
        mode,
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        judge_tokens,
    }
}

pub const ITEMS_FILE: &str = "items.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn records_to_jsonl(records: &[ItemRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes `items.jsonl` and `summary.json` into `dir`, creating it.
pub fn write_results(dir: &Path, run: &BenchmarkRun) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let items = dir.join(ITEMS_FILE);
    fs::write(&items, records_to_jsonl(&run.records)).map_err(io_err(&items))?;
    let summary = dir.join(SUMMARY_FILE);
    let mut f = fs::File::create(&summary).map_err(io_err(&summary))?;
    let body = serde_json::to_string_pretty(&run.report).expect("report serializes");
    writeln!(f, "{body}").map_err(io_err(&summary))?;
    Ok(())
}

pub fn read_records(dir: &Path) -> Result<Vec<ItemRecord>, EvalError> {
    let path = dir.join(ITEMS_FILE);
    let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Results(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<MetricReport, EvalError> {
    let path = dir.join(SUMMARY_FILE);
    let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&raw).map_err(|e| EvalError::Results(e.to_string()))
}
