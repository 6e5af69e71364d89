//! Command-line front end: ingest, inspect, train, evaluate, test and time.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "layoutlab", version, about = "Layout-aware document NER lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an OCR word corpus and write it in canonical form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Page count and word-level label distribution.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build a word vocabulary from a corpus.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        max_size: usize,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long, overrides_with = "no_lowercase")]
        lowercase: bool,
        #[arg(long, overrides_with = "lowercase")]
        no_lowercase: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-LM pre-training of a fresh encoder.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint for BIO tagging.
    Finetune(FinetuneArgs),
    /// Fine-tune once per seed and summarize F1.
    Multirun(MultirunArgs),
    /// Score a tagging checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Paired randomization test over per-document scores.
    Significance {
        #[arg(long)]
        scores_a: PathBuf,
        #[arg(long)]
        scores_b: PathBuf,
        #[arg(long, default_value_t = 9999)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enumerate every swap assignment (at most 20 documents).
        #[arg(long)]
        exact: bool,
    },
    /// Per-page inference latency at several encoder depths.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// `key = value` model settings; defaults apply when omitted.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 80)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub warmup_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.loss.tsv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Args)]
pub struct ModelInput {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to `<ckpt>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Keep only the bottom K encoder layers.
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    /// Labeled corpus to score after training.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MultirunArgs {
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub train: TrainingArgs,
    /// `A..B` (B exclusive) or a comma list.
    #[arg(long)]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelInput,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Write per-document F1, one per line.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to `<ckpt>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated depths; all layers when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Label set for a per-depth F1 column.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { input, format, labels, out } => commands::ingest(&input, format, &labels, &out),
        Command::Stats { data, labels, json } => commands::stats(&data, &labels, json),
        Command::BuildVocab { data, max_size, min_freq, lowercase: _, no_lowercase, out } => {
            commands::build_vocab(&data, max_size, min_freq, !no_lowercase, &out)
        }
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Multirun(a) => commands::multirun(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Significance { scores_a, scores_b, iterations, seed, exact } => {
            commands::significance(&scores_a, &scores_b, iterations, seed, exact)
        }
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
