//! Command-line workflows around the `caishift` library: model selection and
//! area-mean prediction from CSV data, and the two simulation studies.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod input;
pub mod manifest;
pub mod output;

use std::path::Path;

pub use args::Cli;
pub use error::{CliError, Result};

use args::Command;
use config::{Common, FileConfig};
use manifest::RunManifest;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn record(common: &Common, command: &str, config: impl serde::Serialize, seed: Option<u64>, started: String, artifacts: Vec<String>) -> Result<()> {
    manifest::append(
        &common.out,
        RunManifest {
            command: command.into(),
            config: serde_json::to_value(config).expect("settings serialize"),
            seed,
            started,
            finished: manifest::now(),
            artifacts,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let common = config::common(cli, &file);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli, &common, &file))
}

fn dispatch(cli: &Cli, common: &Common, file: &FileConfig) -> Result<()> {
    let started = manifest::now();
    match &cli.command {
        Command::Select(a) => {
            let s = config::select_settings(a, common, file);
            let loaded = input::load(&a.input.data, a.input.area_means.as_deref())?;
            let report = commands::select(&loaded, &s)?;
            ensure_dir(&common.out)?;
            let files = commands::write_select(&common.out, &report, &loaded.columns)?;
            let best = report.selection.best().expect("select returns a ranked candidate");
            println!(
                "best: {} ({} = {:.4}, {} mode, psi = {:.4}{})",
                input::model_label(&best.candidate, &loaded.columns),
                s.variant,
                best.total,
                report.mode,
                report.psi.psi_hat,
                if report.psi.truncated { ", truncated" } else { "" }
            );
            record(common, "select", &s, Some(s.seed), started, files)
        }
        Command::Predict(a) => {
            let s = config::predict_settings(a, file)?;
            let loaded = input::load(&a.input.data, a.input.area_means.as_deref())?;
            let (cand, preds, rows) = commands::predict(&loaded, &s)?;
            ensure_dir(&common.out)?;
            let files = commands::write_predict(&common.out, &rows)?;
            println!(
                "predicted {} areas with {} (psi = {:.4})",
                rows.len(),
                input::model_label(&cand, &loaded.columns),
                preds.psi.psi_hat
            );
            record(common, "predict", &s, None, started, files)
        }
        Command::SimulateBias(a) => {
            let s = config::bias_settings(a, common, file);
            let (res, order) = commands::simulate_bias(&s)?;
            ensure_dir(&common.out)?;
            let files = commands::write_bias(&common.out, &res, &order)?;
            println!("{:>16} {:>10} {:>9} {:>9} {:>9}", "model", "cAI", "u %", "hat %", "dagger %");
            for r in &res.rows {
                println!(
                    "{:>16} {:>10.3} {:>9.3} {:>9.3} {:>9.3}",
                    output::indices_label(r.candidate.indices()),
                    r.true_cai,
                    r.u.relbias,
                    r.hat.relbias,
                    r.dagger.relbias
                );
            }
            record(common, "simulate-bias", &s, Some(s.experiment.seed), started, files)
        }
        Command::SimulateSae(a) => {
            let cfg = config::sae_settings(a, common, file);
            let res = commands::simulate_sae(&cfg)?;
            ensure_dir(&common.out)?;
            let files = commands::write_sae(&common.out, &res)?;
            let (better, similar) = commands::sae_summary(&res);
            println!(
                "area-level MSE ratio < 1 in {:.1}% of areas; unit-level ratio in [0.8, 1.2] in {:.1}%",
                100.0 * better,
                100.0 * similar
            );
            record(common, "simulate-sae", &cfg, Some(cfg.seed), started, files)
        }
    }
}
