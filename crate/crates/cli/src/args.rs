use caishift::smallarea::PredictiveMode;
use caishift::Variant;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "caishift", version, about = "Model selection for mixed models under covariate shift")]
pub struct Cli {
    /// Flat TOML file of default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory for CSV files and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank candidate covariate sets by a conditional Akaike criterion.
    Select(SelectArgs),
    /// Predict finite-population area means under one model.
    Predict(PredictArgs),
    /// Bias of the criteria against a Monte Carlo truth.
    SimulateBias(BiasArgs),
    /// Design-based small-area study on a synthetic population.
    SimulateSae(SaeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSet {
    /// Intercept plus every subset of the covariates.
    All,
    /// Intercept plus the first k covariates, k = 0..K.
    Nested,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Unit-level CSV with columns area, unit, y and the covariates; an empty y marks an unsampled unit.
    pub data: PathBuf,

    /// Area-level CSV with columns area, the covariate means over all units, and N.
    #[arg(long)]
    pub area_means: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: DataArgs,

    #[arg(long)]
    pub variant: Option<Variant>,

    #[arg(long)]
    pub predictive: Option<PredictiveMode>,

    #[arg(long)]
    pub boot_reps: Option<usize>,

    #[arg(long, value_enum)]
    pub candidates: Option<CandidateSet>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: DataArgs,

    /// Comma-separated covariate names; the intercept is always included.
    #[arg(long)]
    pub model: Option<String>,

    #[arg(long)]
    pub predictive: Option<PredictiveMode>,

    /// Treat y as log prices and predict means of exp(y).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub log_scale: Option<bool>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    /// Outer Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long)]
    pub oracle_reps: Option<usize>,

    #[arg(long)]
    pub boot_reps: Option<usize>,

    #[arg(long)]
    pub predictive: Option<PredictiveMode>,

    /// Also run the R3 order study on these replication factors of the design.
    #[arg(long, value_delimiter = ',')]
    pub order_copies: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct SaeArgs {
    /// Number of samples drawn from the population.
    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long)]
    pub variant: Option<Variant>,

    #[arg(long)]
    pub boot_reps: Option<usize>,
}
