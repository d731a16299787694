//! `ctxprompt`: synthesize corpora, pretrain the backbone, train prompt
//! strategies, generate, evaluate, compare, and run the annotation service.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::TrainOverrides;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "failed: {m}"),
        }
    }
}

impl From<ctxprompt::Error> for CliError {
    fn from(e: ctxprompt::Error) -> Self {
        use ctxprompt::Error::*;
        match e {
            Config(_) | Corpus { .. } | EmptyCorpus | Checkpoint(_) | Json(_) | MissingParam(_) | TooLong { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ctxprompt::annotation::AnnotationError> for CliError {
    fn from(e: ctxprompt::annotation::AnnotationError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ctxprompt",
    version,
    about = "Prompt-strategy experiments for dialog response generation"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic two-domain corpus.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_dialogs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a fresh backbone on context-free pairs and save it frozen.
    PretrainBackbone {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for weight initialization.
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Train one prompt strategy against a frozen backbone.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        /// One of prefix, prefix_ds, cdp, cdp_ds.
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the training report (stdout by default).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Greedy generation over a split.
    Generate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        /// Prompt checkpoint; without it the backbone runs with no prefix.
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a generations file against the corpus.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Train and evaluate all four strategies from one frozen backbone.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Host the annotation API over the outputs of `compare`.
    ServeAnnotation {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory holding `<strategy>.generations.json` for all four strategies.
        #[arg(long)]
        generations_dir: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Fraction of generated conversations to annotate.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        subset_seed: u64,
    },
    /// Tally an annotation store, or the built-in replay fixture.
    Tally {
        #[arg(long, conflicts_with = "replay", required_unless_present = "replay")]
        store: Option<PathBuf>,
        /// Use synthetic records that encode the reported human-comparison outcome.
        #[arg(long)]
        replay: bool,
        /// Also write the remapped CSV export here.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
