//! `compactrag`: build a QA knowledge base, index it, ask questions, run
//! benchmarks and emit token curves.
//!
//! Exit status is 0 on success, 1 when a run fails, 2 on a usage error.

mod commands;
mod config;
mod services;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compactrag_core::Mode;
use config::{BackendKind, FileConfig, Overrides, Settings};

/// A mistake in how the tool was invoked, as opposed to a failed run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "compactrag",
    version,
    about = "Two-call multi-hop question answering over an atomic QA knowledge base"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML file with backend settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Seed for the mock embedder.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Log to stderr at debug level.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a passage corpus (JSONL) into a QA knowledge base.
    BuildKb {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Identifier recorded in the KB header; defaults to the corpus file name.
        #[arg(long)]
        corpus_id: Option<String>,
    },
    /// Embed the valid pairs of a knowledge base.
    Index {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one question and print the result as JSON.
    Ask {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        emit_evidence: bool,
    },
    /// Run a JSONL dataset and write per-item records and a summary.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        k: Option<usize>,
        /// Score answers with the judge model as well.
        #[arg(long)]
        judge: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write cumulative and per-query token curves for an eval run.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Defaults to the offline cost stored in the run summary.
        #[arg(long)]
        offline_cost: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn k(&self) -> Option<usize> {
        match self {
            Command::Ask { k, .. } | Command::Eval { k, .. } => *k,
            _ => None,
        }
    }
}

fn settings(global: &GlobalArgs, k: Option<usize>) -> Result<Settings, UsageError> {
    let file = match &global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Settings::resolve(
        file,
        Overrides { backend: global.backend, seed: global.seed, concurrency: global.concurrency, k },
    )
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let settings = settings(&cli.global, cli.command.k())?;
    match cli.command {
        Command::BuildKb { corpus, out, corpus_id } => commands::build_kb(&settings, &corpus, &out, corpus_id),
        Command::Index { kb, out } => commands::index(&settings, &kb, &out),
        Command::Ask { kb, index, question, mode, emit_evidence, .. } => {
            commands::ask(&settings, &kb, &index, &question, mode, emit_evidence)
        }
        Command::Eval { dataset, kb, index, mode, judge, out, .. } => {
            commands::eval(&settings, &dataset, &kb, &index, mode, judge, &out)
        }
        Command::Report { results, offline_cost, out } => commands::report(&results, offline_cost, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { tracing::Level::DEBUG } else { tracing::Level::WARN };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
