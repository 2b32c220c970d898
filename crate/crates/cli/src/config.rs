use caishift::simlab::{BiasExperimentConfig, DesignSimConfig};
use caishift::smallarea::PredictiveMode;
use caishift::Variant;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::args::{BiasArgs, CandidateSet, Cli, PredictArgs, SaeArgs, SelectArgs};
use crate::error::{CliError, Result};

/// Settings file: one flat table of optional keys. Keys a command does not
/// use are ignored by it; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub predictive: Option<PredictiveMode>,
    pub boot_reps: Option<usize>,
    pub candidates: Option<CandidateSet>,
    pub model: Option<String>,
    pub log_scale: Option<bool>,
    pub reps: Option<usize>,
    pub oracle_reps: Option<usize>,
    pub order_copies: Option<Vec<usize>>,
    pub q: Option<usize>,
    pub n_i: Option<usize>,
    pub r_i: Option<usize>,
    pub p_omega: Option<usize>,
    pub p_star: Option<usize>,
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
    pub covariate_correlation: Option<f64>,
    pub sample_size: Option<usize>,
    pub population_size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_SELECT_SEED: u64 = 1;
pub const DEFAULT_BOOT_REPS: usize = 1000;

/// Settings shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Common {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

pub fn common(cli: &Cli, file: &FileConfig) -> Common {
    Common {
        seed: cli.seed.or(file.seed),
        workers: cli.workers.or(file.workers),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("caishift-out")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectSettings {
    pub seed: u64,
    pub variant: Variant,
    /// `None` picks the mode the input supports.
    pub predictive: Option<PredictiveMode>,
    pub boot_reps: usize,
    pub candidates: CandidateSet,
}

pub fn select_settings(args: &SelectArgs, c: &Common, file: &FileConfig) -> SelectSettings {
    SelectSettings {
        seed: c.seed.unwrap_or(DEFAULT_SELECT_SEED),
        variant: args.variant.or(file.variant).unwrap_or(Variant::Hat),
        predictive: args.predictive.or(file.predictive),
        boot_reps: args.boot_reps.or(file.boot_reps).unwrap_or(DEFAULT_BOOT_REPS),
        candidates: args.candidates.or(file.candidates).unwrap_or(CandidateSet::All),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictSettings {
    pub model: Vec<String>,
    pub predictive: Option<PredictiveMode>,
    pub log_scale: bool,
}

pub fn predict_settings(args: &PredictArgs, file: &FileConfig) -> Result<PredictSettings> {
    let spec = args
        .model
        .clone()
        .or_else(|| file.model.clone())
        .ok_or_else(|| CliError::input("predict needs --model (comma-separated covariate names)"))?;
    let model = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    Ok(PredictSettings {
        model,
        predictive: args.predictive.or(file.predictive),
        log_scale: args.log_scale.or(file.log_scale).unwrap_or(false),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSettings {
    pub experiment: BiasExperimentConfig,
    pub order_copies: Vec<usize>,
}

pub fn bias_settings(args: &BiasArgs, c: &Common, file: &FileConfig) -> BiasSettings {
    let d = BiasExperimentConfig::default();
    let experiment = BiasExperimentConfig {
        q: file.q.unwrap_or(d.q),
        n_i: file.n_i.unwrap_or(d.n_i),
        r_i: file.r_i.unwrap_or(d.r_i),
        p_omega: file.p_omega.unwrap_or(d.p_omega),
        p_star: file.p_star.unwrap_or(d.p_star),
        covariate_correlation: file.covariate_correlation.unwrap_or(d.covariate_correlation),
        sigma2: file.sigma2.unwrap_or(d.sigma2),
        tau2: file.tau2.unwrap_or(d.tau2),
        predictive_mode: args.predictive.or(file.predictive).unwrap_or(d.predictive_mode),
        outer_reps: args.reps.or(file.reps).unwrap_or(d.outer_reps),
        oracle_reps: args.oracle_reps.or(file.oracle_reps).unwrap_or(d.oracle_reps),
        boot_reps: args.boot_reps.or(file.boot_reps).unwrap_or(d.boot_reps),
        seed: c.seed.unwrap_or(d.seed),
        ..d
    };
    BiasSettings {
        experiment,
        order_copies: args.order_copies.clone().or_else(|| file.order_copies.clone()).unwrap_or_default(),
    }
}

pub fn sae_settings(args: &SaeArgs, c: &Common, file: &FileConfig) -> DesignSimConfig {
    let d = DesignSimConfig::default();
    DesignSimConfig {
        q: file.q.unwrap_or(d.q),
        n: file.sample_size.unwrap_or(d.n),
        population_size: file.population_size.unwrap_or(d.population_size),
        samples: args.reps.or(file.reps).unwrap_or(d.samples),
        seed: c.seed.unwrap_or(d.seed),
        variant: args.variant.or(file.variant).unwrap_or(d.variant),
        boot_reps: args.boot_reps.or(file.boot_reps).unwrap_or(d.boot_reps),
        ..d
    }
}
