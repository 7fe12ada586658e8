use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const BUDGET: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
    pub const SOLVER: u8 = 5;
}

#[derive(Parser, Debug)]
#[command(name = "ltl", version, about = "Train and analyze two-layer Leaky-ReLU networks on linearly separable data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Gaussians,
    Antipodal,
    Outlier,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Sgd,
    Gd,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (CSV plus JSON sidecar).
    Gen(GenArgs),
    /// Train a network and write its trace, final parameters and manifest.
    Train(TrainArgs),
    /// Clustering, regime and linear-region analysis of trained parameters.
    Analyze(AnalyzeArgs),
    /// Solve the perfect-agreement max-margin program for a dataset.
    Svm(SvmArgs),
    /// Print the SGD update budget M(n, eps) and its terms.
    Bound(BoundArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value_t = ltl_core::datagen::DEFAULT_D)]
    pub d: usize,
    #[arg(long, default_value_t = ltl_core::datagen::DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = ltl_core::datagen::DEFAULT_MARGIN_GAP)]
    pub margin_gap: f64,
    #[arg(long, default_value_t = ltl_core::datagen::DEFAULT_MEAN_SEP)]
    pub mean_sep: f64,
    #[arg(long, default_value_t = ltl_core::datagen::DEFAULT_STD)]
    pub std: f64,
    /// Append a constant coordinate 1 to every point (first-layer bias emulation).
    #[arg(long)]
    pub append_one: bool,
    /// Output CSV path; the sidecar is written next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub init_std: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = Mode::Sgd)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_updates: u64,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Margin used for the NAR/PAR flags in the trace.
    #[arg(long, default_value_t = ltl_core::regimes::DEFAULT_BETA)]
    pub beta: f64,
    /// Comma-separated init scales; each runs in its own subdirectory.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    /// Parameters JSON written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Optional held-out set; its nonlinear fraction is reported separately.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = ltl_core::regimes::DEFAULT_BETA)]
    pub beta: f64,
    /// Number of unit-sphere probes for the linear-region check.
    #[arg(long, default_value_t = 10_000)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid points per axis for the 2-d decision-boundary sample.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Also run the data-symmetry check at `beta`.
    #[arg(long)]
    pub symmetry: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct SvmArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Parameters JSON to compare neuron directions against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct BoundArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rx: f64,
    #[arg(long, default_value_t = 0.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_star_norm: f64,
    #[arg(long)]
    pub json: bool,
}

/// Maps a failure to its exit code by looking for a library error in the chain.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use ltl_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Divergence { .. } => exit::DIVERGENCE,
                E::Solver { .. } => exit::SOLVER,
                E::Io(_) | E::Json(_) | E::Csv(_) => exit::FAILURE,
                _ => exit::USAGE,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return exit::USAGE;
        }
    }
    exit::FAILURE
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", dir.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Svm(a) => commands::svm(&a),
        Command::Bound(a) => commands::bound(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
