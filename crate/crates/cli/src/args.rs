use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "late-bounds", version, about = "Sharp bounds and confidence intervals for the LATE with a misclassified treatment")]
pub struct Cli {
    /// `key = value` config file, or a previous run's output; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: REPLICATE_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write the result here instead of stdout.
    #[arg(long, short, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sharp identified set on a data file.
    #[command(args_override_self = true)]
    Bounds(BoundsArgs),
    /// Confidence interval by test inversion over a θ grid.
    #[command(args_override_self = true)]
    Ci(CiArgs),
    /// Check whether the Wald estimand lies in the identified set.
    #[command(args_override_self = true)]
    CheckWald(CheckWaldArgs),
    /// Coverage experiment on the simulation design, or one simulated sample.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Population bounds at the reference design points plus a K sweep.
    #[command(args_override_self = true)]
    ReplicateTables(ReplicateArgs),
}

#[derive(ValueEnum, Serialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RegimeArg {
    Unconditional,
    Conditional,
    WithR,
    NoT,
}

#[derive(ValueEnum, Serialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SpacingArg {
    Quantile,
    EqualWidth,
}

#[derive(ValueEnum, Serialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PropensityArg {
    /// Share of `z = 1` in the sample.
    SampleShare,
    /// Linear probability model on the covariates.
    Lpm,
    /// The value given by `--pi`.
    Fixed,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Column roles, `y=..,t=..,z=..[,r=..][,v=a;b]`.
    #[arg(long, default_value = "y=y,t=t,z=z")]
    pub schema: String,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct PartitionArgs {
    #[arg(long, value_enum, default_value = "unconditional")]
    pub regime: RegimeArg,
    /// Outcome intervals.
    #[arg(long, default_value_t = 4)]
    pub k_n: usize,
    #[arg(long, value_enum, default_value = "quantile")]
    pub spacing: SpacingArg,
    /// Quantile bins per varying covariate (conditional regime).
    #[arg(long)]
    pub v_cells: Option<usize>,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct BoundsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub partition: PartitionArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_hi: Option<f64>,
    /// Propensity trimming for the conditional regime.
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct CiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub partition: PartitionArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Level of the propensity region; 0 uses the point estimate only.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1000)]
    pub b_reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_lo: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_hi: f64,
    #[arg(long, default_value_t = 401)]
    pub grid_points: usize,
    /// Explicit θ values; replaces the even grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "sample_share")]
    pub propensity: PropensityArg,
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    /// Drop clearly slack moments at this level before testing.
    #[arg(long)]
    pub preselect_beta: Option<f64>,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct CheckWaldArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 4)]
    pub k_n: usize,
    #[arg(long, value_enum, default_value = "quantile")]
    pub spacing: SpacingArg,
    /// Per-cell slack in two-sample standard errors.
    #[arg(long, default_value_t = 2.0)]
    pub tolerance_se: f64,
    /// No slack at all.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "unconditional")]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub sims: usize,
    #[arg(long, default_value_t = 1000)]
    pub b_reps: usize,
    #[arg(long, default_value_t = 2)]
    pub k_n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6", allow_hyphen_values = true)]
    pub thetas: Vec<f64>,
    /// Propensity used by the test, held fixed.
    #[arg(long, default_value_t = 0.5)]
    pub pi: f64,
    /// Copula correlation exactly rho and outcome noise Φ(U2).
    #[arg(long)]
    pub literal: bool,
    /// Write one simulated sample of size `n` as CSV instead.
    #[arg(long)]
    pub sample_only: bool,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct ReplicateArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub n_mc: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub k_sweep: Vec<usize>,
}
