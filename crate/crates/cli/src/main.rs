mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Deep voxel representations trained jointly with soft actor-critic.
#[derive(Debug, Parser)]
#[command(name = "voxrep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic multi-view orbit dataset.
    GenData(GenDataArgs),
    /// Pretrain the 3D pipeline on a multi-view dataset.
    Pretrain(RunArgs),
    /// Jointly train the 3D pipeline and the SAC agent in the simulated world.
    Train(TrainArgs),
    /// Evaluate a trained run.
    Eval(EvalArgs),
    /// Render learning curves or ablation bars as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total azimuth swept by each orbit, degrees.
    #[arg(long, default_value_t = 90.0)]
    arc: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` settings applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; each gets its own run directory.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Dataset root; falls back to `data_root` in the config, then `VOXREP_DATA_ROOT`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Parent of the run directories.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Start from these parameters instead of the run's own pretraining.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Synth,
    Pose,
    Policy,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    mode: EvalMode,
    /// Run directory written by `pretrain` or `train`.
    #[arg(long)]
    run: PathBuf,
    /// Parameters to evaluate; defaults to the run's final or pretrained ones.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Dynamic camera offsets, degrees.
    #[arg(long = "phi-d", value_delimiter = ',', default_values_t = [15.0, 30.0, 45.0, 60.0])]
    phi_d: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    n_pairs: usize,
    #[arg(long, default_value_t = 8)]
    traj_len: usize,
    #[arg(long, default_value_t = 8)]
    trajectories: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label for the pose report rows.
    #[arg(long)]
    variant: Option<String>,
    /// Report path; defaults to a file in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// A metric against steps, mean and 95% band across logs.
    Curve,
    /// One bar per ablation cell or pose variant, mean and spread across files.
    Bars,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// Training logs (curve) or report CSVs (bars).
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    /// Log metric for curves; `ssim`, `psnr` or `rmse` for bars.
    #[arg(long, default_value = "success_rate")]
    metric: String,
    /// Dynamic camera offset selected from synthesis reports.
    #[arg(long = "phi-d", default_value_t = 30.0)]
    phi_d: f64,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes with stable exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad arguments or configuration: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl From<voxrep::Error> for Failure {
    fn from(e: voxrep::Error) -> Self {
        match e {
            voxrep::Error::Config { .. } | voxrep::Error::UnknownTask(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => run::gen_data(&a),
        Command::Pretrain(a) => run::pretrain(&a),
        Command::Train(a) => run::train(&a),
        Command::Eval(a) => run::eval(&a),
        Command::Plot(a) => plot::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
