//! The `driftscope` command line.
//!
//! A typical session:
//!
//! ```text
//! driftscope preprocess --run demo --manifest docs.json --split 1900
//! driftscope train      --run demo --model sgns-op
//! driftscope align      --run demo
//! driftscope evaluate   --run demo --model sgns-op --metric cosine --changed c.txt --stable s.txt
//! driftscope report     --run demo
//! driftscope serve
//! ```
//!
//! Exit status is 0 on success, 1 on a usage or input error and 2 on an
//! internal failure. Diagnostics go to stderr; stdout carries JSON only
//! with `--json`.

mod commands;
pub mod config;

use std::io::Write;
use std::net::IpAddr;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use driftscope_core::align::AlignError;
use driftscope_core::corpus::CorpusError;
use driftscope_core::detector::{DetectorError, ModelKind};
use driftscope_core::metrics::OccurrenceFileError;
use driftscope_core::projection::ProjectionError;
use driftscope_core::sgns::SgnsError;
use driftscope_core::storage::StorageError;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "driftscope",
    version,
    about = "Lexical semantic change detection between two time-sliced corpora"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Registry root [default: $DRIFTSCOPE_HOME, else ./.driftscope]
    #[arg(long, global = true)]
    pub home: Option<PathBuf>,
    /// JSON file supplying any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; more than one makes training non-reproducible
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Print machine-readable JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize dated documents into a two-slice corpus and start a run
    Preprocess(PreprocessArgs),
    /// Train SGNS embeddings for a run
    Train(TrainArgs),
    /// Rotate the earlier slice's embeddings onto the later slice
    Align(AlignArgs),
    /// Import contextual occurrence vectors
    IngestOccurrences(IngestArgs),
    /// Rank target words by change
    Score(ScoreArgs),
    /// Rank, binarize and compare against gold changed/stable lists
    Evaluate(EvaluateArgs),
    /// Lay out both periods' vectors of some words in 3-D
    Project(ProjectArgs),
    /// Serve the JSON API (and UI assets) over the registry
    Serve(ServeArgs),
    /// Collect every evaluation of a run into one table
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["manifest", "semeval", "synthetic"])))]
pub struct PreprocessArgs {
    /// Run id [default: derived from the current time]
    #[arg(long)]
    pub run: Option<String>,
    /// JSON list of {path, id, year, region} documents
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory with corpus1/ and corpus2/ of one sentence per line
    #[arg(long)]
    pub semeval: Option<PathBuf>,
    /// Generate a planted-drift corpus with this many tokens per slice
    #[arg(long, value_name = "TOKENS")]
    pub synthetic: Option<usize>,
    /// Year starting the later slice
    #[arg(long, conflicts_with = "interval")]
    pub split: Option<i32>,
    /// Slice as LABEL:START:END; give exactly two
    #[arg(long)]
    pub interval: Vec<String>,
    /// Keep the original letter case
    #[arg(long)]
    pub keep_case: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub run: String,
    /// sgns-op or sgns-wi
    #[arg(long)]
    pub model: String,
    /// Word lists of targets to inject (sgns-wi)
    #[arg(long)]
    pub targets: Vec<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negative: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub ns_exponent: Option<f64>,
    /// Tag separator for injected targets
    #[arg(long)]
    pub separator: Option<char>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub run: String,
    /// Length-normalize rows before aligning
    #[arg(long)]
    pub normalize: bool,
    /// Mean-center rows before aligning
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub run: String,
    /// Occurrence file (JSON lines)
    #[arg(long)]
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// sgns-op, sgns-wi, elmo-prev or elmo-post
    #[arg(long)]
    pub model: Option<String>,
    /// Metric name; repeat or separate with commas
    #[arg(long, required = true, value_delimiter = ',')]
    pub metric: Vec<String>,
    /// mean, absolute:<x> or quantile:<q>
    #[arg(long, default_value = "mean")]
    pub threshold: String,
    /// Use Σ|a−b| / Σ|a+b| instead of the term-wise Bray-Curtis sum
    #[arg(long)]
    pub conventional_bray_curtis: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub run: String,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Word lists of targets
    #[arg(long, required = true)]
    pub targets: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: Option<String>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Gold list of changed words
    #[arg(long)]
    pub changed: PathBuf,
    /// Gold list of stable words
    #[arg(long)]
    pub stable: PathBuf,
    /// Evaluate a word,score CSV instead of scoring a model
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long)]
    pub model: String,
    /// Words to project; repeat or separate with commas
    #[arg(long, value_delimiter = ',')]
    pub words: Vec<String>,
    /// Word list file
    #[arg(long)]
    pub words_file: Option<PathBuf>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Also write the points as CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = driftscope_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Built UI assets to serve at /
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::CorruptArtifact { .. }
            | StorageError::VersionMismatch { .. }
            | StorageError::Io { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SgnsError> for CliError {
    fn from(e: SgnsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Svd => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<OccurrenceFileError> for CliError {
    fn from(e: OccurrenceFileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub(crate) fn parse_model(name: &str) -> Result<ModelKind, CliError> {
    name.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown model `{name}` (valid models: sgns-op, sgns-wi, elmo-prev, elmo-post)"
        ))
    })
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the exit status.
pub fn run(argv: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let argv = match config::merge(argv) {
        Ok(argv) => argv,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                1
            } else {
                let _ = write!(out, "{rendered}");
                0
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match commands::dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
