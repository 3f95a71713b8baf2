//! `dxtract` — operator surface for the differential-diagnosis extraction
//! pipeline: teacher labeling, re-voting, stratified splitting, fine-tune
//! pair emission, evaluation, error analysis, and the QLoRA numeric
//! utilities.
//!
//! Exit codes: 0 success, 1 partial failures present, 2 usage/config error,
//! 3 backend unavailable.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "dxtract",
    version,
    about = "Differential-diagnosis extraction pipeline for radiology impressions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VoteModeArg {
    Set,
    PerLabel,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    First,
    Second,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingPredArg {
    /// Score the report as an empty prediction, with a warning.
    Empty,
    /// Fail the command.
    Error,
}

#[derive(clap::Args)]
pub struct LabelArgs {
    /// Corpus JSONL: {"report_id", "modality", "anatomy"?, "impression"}
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary TSV file
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory (runs.jsonl, labels.jsonl, manifest.json)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    /// Model name sent to the backend
    #[arg(long, default_value = "gpt-4-32k")]
    model: String,
    /// Teacher runs per report (majority voting works on odd counts)
    #[arg(long, default_value_t = 3)]
    runs: u8,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Seed for the mock backend's reply generator
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mock backend per-run flip probability (exercises vote disagreement)
    #[arg(long, default_value_t = 0.0)]
    flip_prob: f64,
    /// Mock backend only: fail requests whose prompt contains this marker
    /// (testing aid for the partial-failure contract)
    #[arg(long)]
    fail_on: Option<String>,
    #[arg(long, value_enum, default_value_t = VoteModeArg::Set)]
    vote: VoteModeArg,
    /// Maximum concurrent in-flight requests
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Endpoint URL for the HTTP backend (or set DX_API_URL)
    #[arg(long)]
    api_url: Option<String>,
    /// Require the vocabulary to have exactly 133 entries
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    strict_vocab: bool,
}

#[derive(clap::Args)]
pub struct VoteArgs {
    /// Stored raw runs JSONL from a previous `label` invocation
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory (labels.jsonl, manifest.json)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = VoteModeArg::Set)]
    vote: VoteModeArg,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    strict_vocab: bool,
}

#[derive(clap::Args)]
pub struct SplitArgs {
    /// Labels JSONL to partition
    #[arg(long)]
    labels: PathBuf,
    /// Output directory (assignment.jsonl, quality.json, manifest.json)
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated part ratios summing to 1
    #[arg(long, default_value = "0.5969,0.4031")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OrderArg::First)]
    order: OrderArg,
}

#[derive(clap::Args)]
pub struct EmitFinetuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Voted labels JSONL
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory (pairs.jsonl, manifest.json)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    strict_vocab: bool,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Gold labels JSONL
    #[arg(long)]
    gold: PathBuf,
    /// Predicted labels JSONL
    #[arg(long)]
    pred: PathBuf,
    /// Corpus JSONL supplying per-report modalities (defaults to "other")
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Where to write the machine-readable metrics JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Count each predicted out-of-vocabulary name as a micro false positive
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    count_oov_as_fp: bool,
    /// Include zero-support classes in the macro average
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    macro_include_unsupported: bool,
    /// What to do when a gold report has no prediction
    #[arg(long, value_enum, default_value_t = MissingPredArg::Empty)]
    on_missing_pred: MissingPredArg,
}

#[derive(clap::Args)]
pub struct ErrorsArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// How many confusion pairs to show
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    strict_vocab: bool,
}

#[derive(clap::Args)]
pub struct ParamCountArgs {
    /// Architecture spec JSON: {"name", "layer_count", "modules": [{"name","d_out","d_in"}]}
    #[arg(long)]
    arch: PathBuf,
    #[arg(long, default_value_t = 64)]
    rank: u32,
    #[arg(long, default_value_t = 16.0)]
    alpha: f64,
}

#[derive(clap::Args)]
pub struct QuantizeArgs {
    /// Input tensor: whitespace-separated decimal values
    #[arg(long)]
    input: PathBuf,
    /// Output quantized tensor file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate teacher labels: render prompts, query the backend N times per
    /// report, parse, and majority-vote
    Label(LabelArgs),
    /// Re-vote stored raw runs without re-querying any backend
    Vote(VoteArgs),
    /// Partition labeled reports into parts by iterative stratification
    Split(SplitArgs),
    /// Emit fine-tune prompt/completion pairs from voted labels
    EmitFinetune(EmitFinetuneArgs),
    /// Score predictions against gold labels (micro/macro P/R/F1, per modality)
    Eval(EvalArgs),
    /// Rank confused label pairs (missed gold label vs co-occurring false prediction)
    Errors(ErrorsArgs),
    /// LoRA trainable-parameter accounting for an architecture spec
    ParamCount(ParamCountArgs),
    /// NF4-quantize a tensor and report round-trip error statistics
    Quantize(QuantizeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Label(args) => commands::cmd_label(args),
        Command::Vote(args) => commands::cmd_vote(args),
        Command::Split(args) => commands::cmd_split(args),
        Command::EmitFinetune(args) => commands::cmd_emit_finetune(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Errors(args) => commands::cmd_errors(args),
        Command::ParamCount(args) => commands::cmd_param_count(args),
        Command::Quantize(args) => commands::cmd_quantize(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Config(_) => ExitCode::from(2),
                CliError::BackendFailure(_) => ExitCode::from(3),
                CliError::Other(_) => ExitCode::from(2),
            }
        }
    }
}
