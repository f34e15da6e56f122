//! `permurank` command line: index, retrieve, rerank, eval, stability,
//! distill and gradcheck.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 gateway error.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::write_atomic;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("gateway: {0}")]
    Gateway(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Gateway(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "permurank", version, about = "Listwise LLM passage re-ranking pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index(IndexArgs),
    /// Run BM25 first-stage retrieval and write a TREC run.
    Retrieve(RetrieveArgs),
    /// Re-rank the candidates of a run.
    Rerank(RerankArgs),
    /// Compute nDCG@k of a run against qrels.
    Eval(EvalArgs),
    /// Summarize repair counters and RBO from a rerank trace.
    Stability(StabilityArgs),
    /// Train a linear student from teacher permutations.
    Distill(DistillArgs),
    /// Finite-difference check of the analytic loss gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Bm25Flags {
    /// BM25 term-frequency saturation.
    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,
    /// BM25 length normalization.
    #[arg(long, default_value_t = 0.4)]
    pub b: f64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// JSONL corpus with `docid`, `text` and optional `title`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output index file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Index built by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Queries as `qid<TAB>text` or JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidates per query.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Output TREC run.
    #[arg(long)]
    pub out: PathBuf,
    /// Run tag written in the last column.
    #[arg(long, default_value = "bm25")]
    pub tag: String,
    #[command(flatten)]
    pub bm25: Bm25Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    PgChat,
    PgText,
    Qg,
    RgFew,
    RgZero,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitialOrderArg {
    AsRetrieved,
    Random,
    Reversed,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// First-stage TREC run to re-rank.
    #[arg(long)]
    pub run: PathBuf,
    /// JSONL corpus holding the passages of the run.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Queries as `qid<TAB>text` or JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output TREC run.
    #[arg(long)]
    pub out: PathBuf,
    /// Re-ranking method.
    #[arg(long, value_enum, default_value = "pg-chat")]
    pub method: Method,
    /// Sliding window size (permutation methods).
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    /// Sliding window step [default: half of --window].
    #[arg(long)]
    pub step: Option<usize>,
    /// Back-to-first passes over the list.
    #[arg(long, default_value_t = 1)]
    pub passes: usize,
    /// Candidate order before the first window.
    #[arg(long, value_enum, default_value = "as-retrieved")]
    pub initial_order: InitialOrderArg,
    /// Seed for random initial order and mock fault injection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Re-rank only the top N candidates and keep the rest in place [default: all].
    #[arg(long, value_name = "N")]
    pub top_k_only: Option<usize>,
    /// OpenAI-compatible base URL.
    #[arg(long, default_value = "https://api.openai.com", conflicts_with_all = ["mock_oracle", "student"])]
    pub endpoint: String,
    /// Model name sent to the endpoint.
    #[arg(long, default_value = "gpt-3.5-turbo", conflicts_with_all = ["mock_oracle", "student"])]
    pub model: String,
    /// Retries after the first attempt for 429, 5xx and transport errors.
    #[arg(long, default_value_t = 3, conflicts_with_all = ["mock_oracle", "student"])]
    pub max_retries: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120, conflicts_with_all = ["mock_oracle", "student"])]
    pub timeout_secs: u64,
    /// Answer from this qrels file with the offline oracle instead of an endpoint [default: off].
    #[arg(long, value_name = "QRELS")]
    pub mock_oracle: Option<PathBuf>,
    /// Oracle fault rate: duplicate an identifier.
    #[arg(long, default_value_t = 0.0, requires = "mock_oracle")]
    pub duplicate_rate: f64,
    /// Oracle fault rate: omit an identifier.
    #[arg(long, default_value_t = 0.0, requires = "mock_oracle")]
    pub drop_rate: f64,
    /// Oracle fault rate: refuse the whole window.
    #[arg(long, default_value_t = 0.0, requires = "mock_oracle")]
    pub reject_rate: f64,
    /// Write one JSONL record per window [default: off].
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Write the final permutations as a teacher dataset [default: off].
    #[arg(long, value_name = "PATH")]
    pub teacher_out: Option<PathBuf>,
    /// Student weights for `--method student` [default: none].
    #[arg(long, value_name = "PATH")]
    pub student: Option<PathBuf>,
    /// Queries processed concurrently (also bounds in-flight requests).
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    /// Passage truncation in words.
    #[arg(long, default_value_t = 120)]
    pub max_words: usize,
    /// Run tag [default: permurank-<method>].
    #[arg(long)]
    pub tag: Option<String>,
    #[command(flatten)]
    pub bm25: Bm25Flags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TREC run to evaluate.
    #[arg(long)]
    pub run: PathBuf,
    /// TREC qrels.
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Print JSON with per-query values instead of the table.
    #[arg(long, default_value_t = false)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Trace written by `rerank --trace`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Print JSON instead of the table.
    #[arg(long, default_value_t = false)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ranknet,
    ListwiseCe,
    Lambda,
    Bce,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Teacher dataset (JSONL) as written by `rerank --teacher-out`.
    #[arg(long)]
    pub teacher: PathBuf,
    /// JSONL corpus holding the teacher's passages.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Training loss.
    #[arg(long, value_enum, default_value = "ranknet")]
    pub loss: LossArg,
    /// Passes over the dataset.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient-descent step size.
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    /// L2 penalty on non-bias weights.
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// Output student JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub bm25: Bm25Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradLossArg {
    All,
    Ranknet,
    ListwiseCe,
    Lambda,
    Bce,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Loss to check.
    #[arg(long, value_enum, default_value = "all")]
    pub loss: GradLossArg,
    /// Random instances per list length.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Comma-separated list lengths.
    #[arg(long, value_delimiter = ',', default_value = "2,5,20")]
    pub sizes: Vec<usize>,
    /// Finite-difference step, in (0, 1e-3].
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Largest acceptable relative error; exceeding it exits with 2.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Instance seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv` (program name first), runs the command, prints errors to
/// stderr and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("permurank: {e}");
            e.exit_code()
        }
    }
}

/// Like [`run`] but captures stdout, for tests and embedding.
pub fn run_captured<I, T>(argv: I) -> (i32, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => return (if e.use_stderr() { 1 } else { 0 }, e.to_string()),
    };
    let mut out = Vec::new();
    let code = match commands::execute(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("permurank: {e}");
            e.exit_code()
        }
    };
    (code, String::from_utf8_lossy(&out).into_owned())
}
