//! `dicesm`: command-line front end for the loss, metric, soft-label,
//! calibration and training code. Results go to stdout as JSON, logs to
//! stderr. Exit codes: 0 success, 1 validation or I/O error, 2 usage error.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dicesm::losses::{BatchMode, ClassMode};
use dicesm::properties::Mutation;
use dicesm::softlabels::{Strategy, TieBreak, WeightScope};

#[derive(Debug, Parser)]
#[command(name = "dicesm", version, about = "Dice semimetric losses, soft labels, calibration and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Seed shared by every randomized subcommand.
#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long, env = "DICESM_SEED", default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a loss and optionally write its gradient, or sample a
    /// one-pixel loss curve as CSV.
    EvalLoss(EvalLossArgs),
    /// Evaluate a metric between a prediction and a label.
    Eval(EvalArgs),
    /// Build training targets from per-rater annotation files.
    MakeSoftLabels(SoftLabelArgs),
    /// Recalibrate a prediction with kernel density estimation.
    Calibrate(CalibrateArgs),
    /// Train a model from a JSON config.
    Train(ConfigArgs),
    /// Distill a student from a teacher checkpoint using a JSON config.
    Distill(ConfigArgs),
    /// Run the randomized invariant suite.
    CheckProperties(PropertyArgs),
    /// Generate a synthetic multi-rater dataset directory.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassModeArg {
    MeanPresent,
    MeanAll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BatchModeArg {
    PerImageThenMean,
    Pooled,
}

#[derive(Debug, Args)]
struct EvalLossArgs {
    /// sdl, sjl, jml1, jml2, dml1, dml2, stl, ctl, cftl, ce or compound.
    #[arg(long)]
    loss: String,
    /// Prediction tensor, `[C, H, W]` or `[N, C, H, W]`.
    #[arg(long, required_unless_present = "curve")]
    pred: Option<PathBuf>,
    #[arg(long, required_unless_present = "curve")]
    label: Option<PathBuf>,
    /// Write the gradient with respect to the prediction here.
    #[arg(long)]
    grad_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.25)]
    ce_weight: f64,
    #[arg(long, default_value_t = 0.75)]
    dml_weight: f64,
    /// Allow `stl` on soft labels.
    #[arg(long)]
    allow_soft_stl: bool,
    #[arg(long, value_enum, default_value_t = ClassModeArg::MeanPresent)]
    class_mode: ClassModeArg,
    #[arg(long, value_enum, default_value_t = BatchModeArg::PerImageThenMean)]
    batch_mode: BatchModeArg,
    /// Loss of a class whose prediction and label are both empty.
    #[arg(long, default_value_t = 0.0)]
    empty_both_value: f64,
    /// Write `x, loss(γ₁), loss(γ₂), ...` for a single pixel to this CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Label of the single pixel used by `--curve`.
    #[arg(long, default_value_t = 0.8)]
    curve_y: f64,
    /// Focal exponents sampled by `--curve`; defaults to `--gamma`.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    /// Grid points on [0, 1] for `--curve`.
    #[arg(long, default_value_t = 101)]
    curve_points: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Dice,
    Bdice,
    Ece,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    label: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// BDice threshold levels.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    thresholds: Vec<f64>,
    /// ECE bins.
    #[arg(long, default_value_t = 15)]
    bins: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Majority,
    RandomRater,
    UniformAvg,
    WeightedAvg,
    LabelSmoothing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightsArg {
    PerImage,
    PerDataset,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Background,
    LowestClass,
}

#[derive(Debug, Args)]
struct SoftLabelArgs {
    /// One hard annotation per rater, `[C, H, W]` or `[N, C, H, W]`.
    #[arg(long = "rater", required = true)]
    raters: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::UniformAvg)]
    strategy: StrategyArg,
    /// Label-smoothing strength, applied to the majority vote.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = WeightsArg::PerImage)]
    weights: WeightsArg,
    #[arg(long, value_enum, default_value_t = TieBreakArg::Background)]
    tie_break: TieBreakArg,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    Boundary,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Hard label used for key points and pixel selection.
    #[arg(long)]
    label: PathBuf,
    /// Calibrated prediction output; required unless `--sweep` is given.
    #[arg(long, required_unless_present = "sweep")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    bandwidth: f64,
    #[arg(long, default_value_t = 1024)]
    n_key: usize,
    /// `boundary` restricts recalibration to misclassified pixels and
    /// pixels near a label boundary.
    #[arg(long, value_enum, default_value_t = ScopeArg::All)]
    scope: ScopeArg,
    /// Chebyshev radius of the boundary band.
    #[arg(long, default_value_t = 1)]
    boundary_radius: usize,
    /// Report ECE for each bandwidth instead of writing a file,
    /// e.g. `5e-5,1e-4,5e-4,1e-3,5e-3,1e-2`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    /// ECE bins for the report.
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Strict JSON config; unknown keys are rejected.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MutationArg {
    None,
    Sign,
}

#[derive(Debug, Args)]
struct PropertyArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Deliberately break the `sign(0)` gradient convention.
    #[arg(long, value_enum, default_value_t = MutationArg::None)]
    mutate: MutationArg,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON generator settings; when given, the other generator flags
    /// are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n_images: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    raters: usize,
    #[arg(long, default_value_t = -2, allow_hyphen_values = true)]
    radius_min: i32,
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    radius_max: i32,
    #[arg(long, default_value_t = 0.2)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0.35)]
    image_noise: f64,
    #[command(flatten)]
    seed: SeedArg,
}

impl From<ClassModeArg> for ClassMode {
    fn from(v: ClassModeArg) -> Self {
        match v {
            ClassModeArg::MeanPresent => ClassMode::MeanPresent,
            ClassModeArg::MeanAll => ClassMode::MeanAll,
        }
    }
}

impl From<BatchModeArg> for BatchMode {
    fn from(v: BatchModeArg) -> Self {
        match v {
            BatchModeArg::PerImageThenMean => BatchMode::PerImageThenMean,
            BatchModeArg::Pooled => BatchMode::Pooled,
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::Majority => Strategy::Majority,
            StrategyArg::RandomRater => Strategy::RandomRater,
            StrategyArg::UniformAvg => Strategy::UniformAvg,
            StrategyArg::WeightedAvg => Strategy::WeightedAvg,
            StrategyArg::LabelSmoothing => Strategy::LabelSmoothing,
        }
    }
}

impl From<WeightsArg> for WeightScope {
    fn from(v: WeightsArg) -> Self {
        match v {
            WeightsArg::PerImage => WeightScope::PerImage,
            WeightsArg::PerDataset => WeightScope::PerDataset,
        }
    }
}

impl From<TieBreakArg> for TieBreak {
    fn from(v: TieBreakArg) -> Self {
        match v {
            TieBreakArg::Background => TieBreak::Background,
            TieBreakArg::LowestClass => TieBreak::LowestClass,
        }
    }
}

impl From<MutationArg> for Mutation {
    fn from(v: MutationArg) -> Self {
        match v {
            MutationArg::None => Mutation::None,
            MutationArg::Sign => Mutation::Sign,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
