//! `rcl`: preprocessing, similarity indexing, training, evaluation and
//! ablation runs for relative contrastive learning.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rcl", version, about = "Relative contrastive learning for sequential recommendation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every verb. Each override is applied on top of the
/// `--config` file, which is applied on top of the built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key=value` training config.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// jaccard, ngram<N>, tfidf, levenshtein or semantic.
    #[arg(long, global = true)]
    pub metric: Option<String>,
    /// Share of the training sequences kept as weak-positive pool.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Weight of the contrastive term.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Softmax temperature of the contrastive terms.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// base, strong, weak, unweight, wrcl or three_pairs.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Any other config key, as `KEY=VALUE`. Repeatable.
    #[arg(long = "param", short = 'p', global = true, value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Root under which every run gets its own directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Default location of input data.
    #[arg(long, global = true, env = "RCL_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter raw interactions and write leave-one-out sequence splits.
    Preprocess(commands::PreprocessArgs),
    /// Build the top-alpha neighbor index of one split.
    Index(commands::IndexArgs),
    /// Similarity histogram of different-target pairs.
    Histogram(commands::HistogramArgs),
    /// Train one model and evaluate it on the test split.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint.
    Eval(commands::EvalArgs),
    /// Train every loss variant under every metric and compare them.
    Ablate(commands::AblateArgs),
    /// Generate a planted-cluster synthetic dataset.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match &cli.command {
        Command::Preprocess(a) => commands::preprocess(&cli.common, a),
        Command::Index(a) => commands::index(&cli.common, a),
        Command::Histogram(a) => commands::histogram(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Ablate(a) => commands::ablate(&cli.common, a),
        Command::Synth(a) => commands::synth(&cli.common, a),
    };
    match result {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
