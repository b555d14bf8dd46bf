use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "taskaug", version, about = "Learnable per-class augmentation for 1D signal classifiers")]
pub struct Cli {
    /// More log output (-v info is the default, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match (self.quiet, self.verbose) {
            (true, _) => "warn",
            (_, 0 | 1) => "info",
            (_, 2) => "debug",
            _ => "trace",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one model per seed and aggregate the results.
    Train(Box<TrainArgs>),
    /// Score the checkpoints of a finished training run.
    Eval(EvalArgs),
    /// Finite-difference checks of every gradient path.
    Gradcheck(GradcheckArgs),
    /// Tabulate learned operator probabilities and strengths.
    InspectPolicy(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    RrIrregularity,
    AmplitudeRatio,
    StOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AugArg {
    None,
    Taskaug,
    Timemask,
    Specaug,
    Dgw,
    Smote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    #[value(name = "divide-by-1000")]
    DivideBy1000,
    ZscorePerLead,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

/// Synthetic generator settings shared by `gen-data` and `train`.
#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Number of records.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub prevalence: Option<f64>,
    #[arg(long)]
    pub leads: Option<usize>,
    /// Samples per lead.
    #[arg(long)]
    pub length: Option<usize>,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    /// Standard deviation of additive measurement noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Header path; the payload is written next to it with extension `.bin`.
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Dataset header written by `gen-data`; omit to generate synthetic data.
    #[arg(long, conflicts_with_all = ["task", "n", "prevalence", "leads", "length", "fs", "noise", "data_seed"])]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Seed of the synthetic generator.
    #[arg(long)]
    pub data_seed: Option<u64>,

    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Split patients without balancing labels across splits.
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,

    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,

    #[arg(long, value_enum)]
    pub aug: Option<AugArg>,
    /// Masked fraction for timemask (grid 0.1, 0.2, 0.5) and specaug (grid 0.1, 0.2).
    #[arg(long)]
    pub mask_frac: Option<f64>,
    /// Policy stages K.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Gumbel-softmax temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Keep the policy at its initial values (InitAug).
    #[arg(long)]
    pub freeze_policy: bool,
    /// One strength per operator shared by both classes.
    #[arg(long)]
    pub global_magnitude: bool,

    /// Inner steps P between policy updates.
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Neumann terms J.
    #[arg(long)]
    pub neumann: Option<usize>,
    #[arg(long)]
    pub inner_lr: Option<f64>,
    #[arg(long)]
    pub outer_lr: Option<f64>,
    #[arg(long)]
    pub fd_epsilon: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed count (`5` means seeds 0..4) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Seeds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Score this dataset instead of one of the run's splits.
    #[arg(long, conflicts_with = "split")]
    pub data: Option<PathBuf>,
    /// Directory for `eval.csv`; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Relative tolerance; displacement gets ten times this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Directory for `gradcheck.csv`; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Trajectory files or run directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Outer step to tabulate; the last snapshot of each run by default.
    #[arg(long, conflicts_with = "all_steps")]
    pub step: Option<usize>,
    /// One row group per outer step shared by all inputs.
    #[arg(long)]
    pub all_steps: bool,
    /// Directory for the CSV tables; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
