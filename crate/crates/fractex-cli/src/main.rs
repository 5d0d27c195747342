//! `fractex`: split ratings, build the reduced grid, expand, and check the
//! result.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

mod commands;
mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "fractex",
    version,
    about = "Fractal expansion of user/item interaction matrices"
)]
struct Cli {
    /// TOML file with defaults for any flag (flags win).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize a ratings file and split each user's latest item into a test set.
    Split(SplitArgs),
    /// Build the reduced grid from a training matrix.
    Reduce(ReduceArgs),
    /// Expand a training matrix (and optionally its test matrix) by a reduced grid.
    Expand(ExpandArgs),
    /// Ranked row-sum, column-sum and spectrum reports for an expansion.
    Stats(StatsArgs),
    /// Check shards, checksums and expansion invariants.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Ratings file (`.csv` with header, otherwise tab-separated).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory for train.tsv, test.tsv and index_map.tsv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SvdArgs {
    /// Subspace iterations of the truncated SVD.
    #[arg(long)]
    pub power_iters: Option<usize>,
    /// Extra columns in the SVD test block.
    #[arg(long)]
    pub oversample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    /// Training matrix in triplet format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output table; the source spectrum goes to `<out>.spectrum.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Falls back to $FRACTEX_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `unit` (default) or `paper`.
    #[arg(long)]
    pub rescale: Option<String>,
    /// Sample rows and columns instead of using the SVD.
    #[arg(long)]
    pub sketch: bool,
    #[command(flatten)]
    pub svd: SvdArgs,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    /// Training matrix in triplet format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Test matrix; expands both with sign-separated output under train/ and test/.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Reduced table from `reduce`. Without it, the grid is built from
    /// --input using --rows/--cols.
    #[arg(long)]
    pub reduced: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Falls back to $FRACTEX_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `deterministic` or `randomized` (default).
    #[arg(long)]
    pub mode: Option<String>,
    /// Shuffle rows and columns of each block (default true).
    #[arg(long, value_name = "BOOL")]
    pub shuffle: Option<bool>,
    /// `unit` (default) or `paper`, when the grid is built here.
    #[arg(long)]
    pub rescale: Option<String>,
    /// `per_block` (default) or `per_block_row`.
    #[arg(long)]
    pub granularity: Option<String>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Gzip shard files.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub gzip: Option<bool>,
    /// Generate only every S-th block in row-major order.
    #[arg(long, value_name = "S")]
    pub subset_stride: Option<usize>,
    #[command(flatten)]
    pub svd: SvdArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Original matrix in triplet format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory holding manifest.json and the shards.
    #[arg(long)]
    pub expanded: Option<PathBuf>,
    /// Reduced table; adds the predicted distributions to the report.
    #[arg(long)]
    pub reduced: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Singular values to compute per matrix (default 20).
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Falls back to $FRACTEX_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Output directory of `expand`.
    #[arg(long)]
    pub expanded: Option<PathBuf>,
    /// Base (training) matrix; enables regeneration and invariant checks.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Test matrix of a split expansion.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// What went wrong, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Verification(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<fractex::Error> for Failure {
    fn from(e: fractex::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Split(args) => commands::split(args, &file),
        Command::Reduce(args) => commands::reduce(args, &file),
        Command::Expand(args) => commands::expand(args, &file),
        Command::Stats(args) => commands::stats(args, &file),
        Command::Verify(args) => verify::verify(args, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}
