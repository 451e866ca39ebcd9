mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Channel charting with laser fusion: simulate, train, localize, evaluate.
#[derive(Parser, Debug)]
#[command(name = "chartfuse", version)]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "CHARTFUSE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate train and test datasets for a scene.
    Simulate(SimulateArgs),
    /// Train a chart model (never reads ground truth).
    Train(TrainArgs),
    /// Estimate the chart-to-world offset from training ToAs.
    EstimateOffset(OffsetArgs),
    /// Localize every step of a dataset with a trained model and offset.
    Localize(LocalizeArgs),
    /// Score a positions file against ground truth.
    Evaluate(EvaluateArgs),
    /// Classical PSO TDoA positioning (needs at least 3 TRPs).
    BaselineTdoa(BaselineArgs),
    /// Check how often a closer UE also receives more power.
    DiagnosePower(PowerArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Output directory; receives `train/`, `test/` and a config snapshot.
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario JSON (scene, kinematics, channel, laser, sizes, seeds).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train trajectory seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_seed: Option<u64>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub test_steps: Option<usize>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Disable receiver noise.
    #[arg(long, conflicts_with = "snr_db")]
    pub noiseless: bool,
    #[arg(long)]
    pub reflection_coeff: Option<f64>,
    /// Omit laser scans from both datasets.
    #[arg(long)]
    pub no_laser: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Variant {
    SplitToa,
    PairToa,
    Hinge,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; receives `model.bin`, `loss.csv` and a config snapshot.
    #[arg(long)]
    pub out: PathBuf,
    /// TRP indices to train on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub trps: Option<Vec<usize>>,
    /// Training config JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Laser loss weight; 0 disables the laser term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Largest step gap with an active laser term.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pairs_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub input_scale: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PsoArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub swarm_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct OffsetArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Bias file to write (3 x f32) with a `.json` manifest beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// TRP indices (default: those recorded with the model).
    #[arg(long, value_delimiter = ',')]
    pub trps: Option<Vec<usize>>,
    #[command(flatten)]
    pub pso: PsoArgs,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bias: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Positions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub trps: Option<Vec<usize>>,
    /// Accepted for uniformity; localization is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Positions CSV from `localize` or `baseline-tdoa`.
    #[arg(long)]
    pub positions: PathBuf,
    /// Dataset with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON; a per-step CSV is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbourhood size for CT/TW (default 5% of N).
    #[arg(long)]
    pub k: Option<usize>,
    /// Extra k values for a CT/TW-vs-k curve.
    #[arg(long, value_delimiter = ',')]
    pub k_curve: Vec<usize>,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub trps: Option<Vec<usize>>,
    #[command(flatten)]
    pub pso: PsoArgs,
}

#[derive(Args, Debug)]
pub struct PowerArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Required power advantage of the closer step (dB).
    #[arg(long, default_value_t = 0.0)]
    pub margin_db: f64,
    #[arg(long, default_value_t = 10_000)]
    pub triples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::EstimateOffset(a) => commands::estimate_offset(a),
        Command::Localize(a) => commands::localize(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::BaselineTdoa(a) => commands::baseline_tdoa(a),
        Command::DiagnosePower(a) => commands::diagnose_power(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
