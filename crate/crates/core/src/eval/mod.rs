//! Scoring, benchmark runs and token curves.

mod bench;
mod curves;
mod judge;
mod metrics;

pub use bench::{
    load_dataset, parse_dataset, read_records, read_summary, records_to_jsonl, run_benchmark, summarize, write_results,
    BenchOptions, BenchmarkRun, DatasetItem, EvalError, ItemRecord, MetricReport, ITEMS_FILE, MAX_FAILURE_RATE,
    SUMMARY_FILE,
};
pub use curves::{curves_csv, first_crossing, token_curves, TokenCurvePoint, CURVE_HEADER};
pub use judge::{judge_prompt, llm_judge, Verdict, JUDGE_MARKER};
pub use metrics::{exact_match, f1_score, normalize_answer};
