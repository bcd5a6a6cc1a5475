//! `kgsq`: ingest, train, evaluate, query and serve knowledge graph
//! embeddings.
//!
//! Exit codes: 0 on success, 1 when a file, stage or environment fails,
//! 2 when a user-supplied name cannot be resolved (and on usage errors).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kgsq", version, about = "Knowledge graph embeddings for semantic queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse triples, report counts and optionally write a train/test split.
    Ingest(IngestArgs),
    /// Train a model and save it as a .kgsq file.
    Train(TrainArgs),
    /// Filtered link-prediction metrics on held-out triples.
    Eval(EvalArgs),
    /// Run one semantic query against a saved model.
    Query(QueryArgs),
    /// Serve the HTTP/JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub types: Option<PathBuf>,
    /// Fraction of triples to hold out, in (0, 1).
    #[arg(long, requires_all = ["train_out", "test_out"])]
    pub holdout: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key=value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub triples: Option<PathBuf>,
    #[arg(long)]
    pub types: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sgd or adagrad.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Training triples, used to filter known facts from the rankings.
    #[arg(long)]
    pub train: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Task {
    Similar,
    Biased,
    Analogy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub entity: String,
    /// Bias set A; repeat or separate with commas.
    #[arg(long = "positive", short = 'p', value_delimiter = ',')]
    pub positives: Vec<String>,
    /// Bias set B; repeat or separate with commas.
    #[arg(long = "negative", short = 'n', value_delimiter = ',')]
    pub negatives: Vec<String>,
    #[arg(short, long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long = "type")]
    pub type_filter: Option<String>,
    /// Keep the anchor and bias entities in the results.
    #[arg(long)]
    pub include_self: bool,
    /// Rank by cosine similarity instead of dot product.
    #[arg(long)]
    pub cosine: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Session lifetime in seconds.
    #[arg(long, default_value_t = 3600)]
    pub session_ttl: u64,
    #[arg(long, default_value_t = 10_000)]
    pub max_sessions: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Query(a) => commands::query(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
