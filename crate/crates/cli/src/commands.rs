use caishift::criteria::{select_best, Selection};
use caishift::linalg::column_rank;
use caishift::rng::derive_seed;
use caishift::simlab::{
    run_bias_experiment, run_design_sim, run_r3_order_study, BiasExperimentResult, DesignSimConfig, DesignSimResult,
    R3OrderRow, COVARIATE_NAMES,
};
use caishift::smallarea::{estimate_psi, nerm_design, predict_area_means, AreaPredictions, PredictiveMode, PsiEstimate};
use caishift::{BootstrapConfig, CandidateModel, Lmm};
use serde::Serialize;
use std::path::Path;

use crate::args::CandidateSet;
use crate::config::{BiasSettings, PredictSettings, SelectSettings};
use crate::error::{CliError, Result};
use crate::input::{model_label, parse_model, LoadedData};
use crate::output::{indices_label, write_csv};

/// Power sets beyond this many covariates are refused.
pub const MAX_EXHAUSTIVE_COVARIATES: usize = 20;

fn resolve_mode(requested: Option<PredictiveMode>, loaded: &LoadedData) -> PredictiveMode {
    requested.unwrap_or(if loaded.data.has_unit_coverage() {
        PredictiveMode::Unit
    } else {
        PredictiveMode::Area
    })
}

pub fn candidate_family(set: CandidateSet, p: usize) -> Result<Vec<CandidateModel>> {
    let k = p - 1;
    let family: Vec<Vec<usize>> = match set {
        CandidateSet::All => {
            if k > MAX_EXHAUSTIVE_COVARIATES {
                return Err(CliError::input(format!(
                    "{k} covariates give too many subsets; use --candidates nested"
                )));
            }
            (0..1usize << k)
                .map(|mask| std::iter::once(0).chain((0..k).filter(|b| mask >> b & 1 == 1).map(|b| b + 1)).collect())
                .collect()
        }
        CandidateSet::Nested => (1..=p).map(|a| (0..a).collect()).collect(),
    };
    family
        .into_iter()
        .map(|idx| CandidateModel::new(idx, p).map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SelectReport {
    pub mode: PredictiveMode,
    pub psi: PsiEstimate,
    pub selection: Selection,
    /// Candidates dropped before evaluation, with the reason.
    pub filtered: Vec<(CandidateModel, String)>,
}

pub fn select(loaded: &LoadedData, s: &SelectSettings) -> Result<SelectReport> {
    let data = &loaded.data;
    let x = data.x();
    let (n, p) = x.shape();
    if column_rank(&x, caishift::linalg::RANK_TOLERANCE) < p {
        return Err(CliError::Degenerate(format!(
            "the {p} design columns (intercept included) are collinear on the sampled units"
        )));
    }
    let mut kept = Vec::new();
    let mut filtered = Vec::new();
    for c in candidate_family(s.candidates, p)? {
        if n <= c.size() + 2 {
            filtered.push((c, format!("needs n > p_j + 2 (n = {n})")));
        } else {
            kept.push(c);
        }
    }
    if kept.is_empty() {
        return Err(CliError::Degenerate(format!(
            "no candidate left after filtering ({} dropped, n = {n})",
            filtered.len()
        )));
    }
    let mode = resolve_mode(s.predictive, loaded);
    let psi = estimate_psi(data)?;
    let (y, design) = nerm_design(data, psi.psi_hat, mode)?;
    let lmm = Lmm::new(design)?;
    let boot = BootstrapConfig::new(s.boot_reps, derive_seed(s.seed, &[1]));
    if let Some(w) = boot.validate()? {
        eprintln!("warning: {w}");
    }
    let selection = select_best(&y, &lmm, &kept, s.variant, Some(&boot))?;
    if selection.ranked.is_empty() {
        return Err(CliError::Degenerate(format!(
            "no candidate could be evaluated ({} excluded)",
            selection.excluded.len()
        )));
    }
    Ok(SelectReport {
        mode,
        psi,
        selection,
        filtered,
    })
}

#[derive(Debug, Serialize)]
struct SelectRow<'a> {
    rank: usize,
    model: String,
    indices: String,
    p_j: usize,
    variant: &'a str,
    sigma2_hat: f64,
    goodness: f64,
    r_star: f64,
    r1: f64,
    r2: f64,
    r3: f64,
    r4: f64,
    delta_cs: f64,
    total: f64,
    best: bool,
}

const SELECT_HEADER: [&str; 15] = [
    "rank", "model", "indices", "p_j", "variant", "sigma2_hat", "goodness", "r_star", "r1", "r2", "r3", "r4",
    "delta_cs", "total", "best",
];

pub const SELECT_CSV: &str = "select.csv";
pub const SELECT_EXCLUDED_CSV: &str = "select_excluded.csv";

pub fn write_select(out: &Path, report: &SelectReport, columns: &[String]) -> Result<Vec<String>> {
    let rows: Vec<SelectRow> = report
        .selection
        .ranked
        .iter()
        .enumerate()
        .map(|(k, b)| SelectRow {
            rank: k + 1,
            model: model_label(&b.candidate, columns),
            indices: indices_label(b.candidate.indices()),
            p_j: b.p_j,
            variant: b.variant.as_str(),
            sigma2_hat: b.sigma2_hat,
            goodness: b.goodness,
            r_star: b.r_star,
            r1: b.r1,
            r2: b.r2,
            r3: b.r3,
            r4: b.r4,
            delta_cs: b.delta_cs,
            total: b.total,
            best: k == 0,
        })
        .collect();
    write_csv(&out.join(SELECT_CSV), &SELECT_HEADER, &rows)?;
    let mut excluded: Vec<(String, String, String)> = report
        .filtered
        .iter()
        .map(|(c, why)| (model_label(c, columns), indices_label(c.indices()), why.clone()))
        .chain(
            report
                .selection
                .excluded
                .iter()
                .map(|(c, e)| (model_label(c, columns), indices_label(c.indices()), e.to_string())),
        )
        .collect();
    excluded.sort();
    write_csv(&out.join(SELECT_EXCLUDED_CSV), &["model", "indices", "reason"], &excluded)?;
    Ok(vec![SELECT_CSV.into(), SELECT_EXCLUDED_CSV.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictRow {
    pub area: String,
    pub population_size: usize,
    pub sample_size: usize,
    /// Mean of the sampled responses, on the price scale under `log_scale`.
    pub sampled_mean: f64,
    pub predicted_mean: f64,
    pub psi_hat: f64,
    pub tau2_hat: f64,
    pub sigma2_hat: f64,
    pub truncated: bool,
}

const PREDICT_HEADER: [&str; 9] = [
    "area", "N", "n", "sampled_mean", "predicted_mean", "psi_hat", "tau2_hat", "sigma2_hat", "truncated",
];

pub const PREDICT_CSV: &str = "predict.csv";

pub fn predict(loaded: &LoadedData, s: &PredictSettings) -> Result<(CandidateModel, AreaPredictions, Vec<PredictRow>)> {
    let cand = parse_model(&s.model, &loaded.columns)?;
    let mode = resolve_mode(s.predictive, loaded);
    let preds = predict_area_means(&loaded.data, &cand, mode, s.log_scale)?;
    let rows = loaded
        .data
        .areas()
        .iter()
        .zip(&preds.finite_means)
        .map(|(a, &m)| PredictRow {
            area: a.id.clone(),
            population_size: a.population_size,
            sample_size: a.n_sampled(),
            sampled_mean: if s.log_scale { a.y.map(f64::exp).mean() } else { a.y.mean() },
            predicted_mean: m,
            psi_hat: preds.psi.psi_hat,
            tau2_hat: preds.psi.tau2_hat,
            sigma2_hat: preds.psi.sigma2_hat,
            truncated: preds.psi.truncated,
        })
        .collect();
    Ok((cand, preds, rows))
}

pub fn write_predict(out: &Path, rows: &[PredictRow]) -> Result<Vec<String>> {
    write_csv(&out.join(PREDICT_CSV), &PREDICT_HEADER, rows)?;
    Ok(vec![PREDICT_CSV.into()])
}

#[derive(Debug, Serialize)]
struct BiasCsvRow {
    model: String,
    p_j: usize,
    overspecified: bool,
    true_cai: f64,
    true_cai_se: f64,
    u_mean: f64,
    u_relbias: f64,
    u_relbias_se: f64,
    hat_mean: f64,
    hat_relbias: f64,
    hat_relbias_se: f64,
    dagger_mean: f64,
    dagger_relbias: f64,
    dagger_relbias_se: f64,
    true_r3: f64,
    r3_corrected_bias: f64,
    r3_corrected_bias_se: f64,
    r3_bootstrap_bias: f64,
    r3_bootstrap_bias_se: f64,
}

const BIAS_HEADER: [&str; 19] = [
    "model", "p_j", "overspecified", "true_cai", "true_cai_se", "u_mean", "u_relbias", "u_relbias_se", "hat_mean",
    "hat_relbias", "hat_relbias_se", "dagger_mean", "dagger_relbias", "dagger_relbias_se", "true_r3",
    "r3_corrected_bias", "r3_corrected_bias_se", "r3_bootstrap_bias", "r3_bootstrap_bias_se",
];

#[derive(Debug, Serialize)]
struct OrderCsvRow {
    n: usize,
    model: String,
    true_r3: f64,
    corrected_bias: f64,
    corrected_bias_se: f64,
    bootstrap_bias: f64,
    bootstrap_bias_se: f64,
}

const ORDER_HEADER: [&str; 7] = [
    "n", "model", "true_r3", "corrected_bias", "corrected_bias_se", "bootstrap_bias", "bootstrap_bias_se",
];

pub const BIAS_CSV: &str = "bias.csv";
pub const R3_ORDER_CSV: &str = "r3_order.csv";

pub fn simulate_bias(s: &BiasSettings) -> Result<(BiasExperimentResult, Vec<R3OrderRow>)> {
    let res = run_bias_experiment(&s.experiment)?;
    let order = if s.order_copies.is_empty() {
        Vec::new()
    } else {
        run_r3_order_study(&s.experiment, &s.order_copies)?
    };
    Ok((res, order))
}

pub fn write_bias(out: &Path, res: &BiasExperimentResult, order: &[R3OrderRow]) -> Result<Vec<String>> {
    let rows: Vec<BiasCsvRow> = res
        .rows
        .iter()
        .map(|r| BiasCsvRow {
            model: indices_label(r.candidate.indices()),
            p_j: r.p_j,
            overspecified: r.overspecified,
            true_cai: r.true_cai,
            true_cai_se: r.true_cai_se,
            u_mean: r.u.mean,
            u_relbias: r.u.relbias,
            u_relbias_se: r.u.relbias_se,
            hat_mean: r.hat.mean,
            hat_relbias: r.hat.relbias,
            hat_relbias_se: r.hat.relbias_se,
            dagger_mean: r.dagger.mean,
            dagger_relbias: r.dagger.relbias,
            dagger_relbias_se: r.dagger.relbias_se,
            true_r3: r.true_r3,
            r3_corrected_bias: r.r3_corrected.bias,
            r3_corrected_bias_se: r.r3_corrected.bias_se,
            r3_bootstrap_bias: r.r3_bootstrap.bias,
            r3_bootstrap_bias_se: r.r3_bootstrap.bias_se,
        })
        .collect();
    write_csv(&out.join(BIAS_CSV), &BIAS_HEADER, &rows)?;
    let mut files = vec![BIAS_CSV.to_string()];
    if !order.is_empty() {
        let rows: Vec<OrderCsvRow> = order
            .iter()
            .map(|r| OrderCsvRow {
                n: r.n,
                model: indices_label(r.candidate.indices()),
                true_r3: r.true_r3,
                corrected_bias: r.corrected.bias,
                corrected_bias_se: r.corrected.bias_se,
                bootstrap_bias: r.bootstrap.bias,
                bootstrap_bias_se: r.bootstrap.bias_se,
            })
            .collect();
        write_csv(&out.join(R3_ORDER_CSV), &ORDER_HEADER, &rows)?;
        files.push(R3_ORDER_CSV.into());
    }
    Ok(files)
}

pub const SAE_AREAS_CSV: &str = "sae_areas.csv";
pub const SAE_SAMPLES_CSV: &str = "sae_samples.csv";

pub fn simulate_sae(cfg: &DesignSimConfig) -> Result<DesignSimResult> {
    Ok(run_design_sim(cfg)?.1)
}

fn land_label(c: &CandidateModel) -> String {
    c.indices().iter().map(|&k| COVARIATE_NAMES[k]).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Serialize)]
struct SampleCsvRow {
    sample: usize,
    attempts: usize,
    psi_hat: f64,
    psi_truncated: bool,
    selected_unit: String,
    selected_area: String,
    selected_baseline: String,
}

pub fn write_sae(out: &Path, res: &DesignSimResult) -> Result<Vec<String>> {
    write_csv(
        &out.join(SAE_AREAS_CSV),
        &[
            "area", "N", "n", "true_mean", "mse_unit", "mse_area", "mse_baseline", "ratio_unit", "ratio_area",
        ],
        &res.areas,
    )?;
    let rows: Vec<SampleCsvRow> = res
        .samples
        .iter()
        .map(|s| SampleCsvRow {
            sample: s.sample,
            attempts: s.attempts,
            psi_hat: s.psi_hat,
            psi_truncated: s.psi_truncated,
            selected_unit: land_label(&s.selected_unit),
            selected_area: land_label(&s.selected_area),
            selected_baseline: land_label(&s.selected_baseline),
        })
        .collect();
    write_csv(
        &out.join(SAE_SAMPLES_CSV),
        &[
            "sample", "attempts", "psi_hat", "psi_truncated", "selected_unit", "selected_area", "selected_baseline",
        ],
        &rows,
    )?;
    Ok(vec![SAE_AREAS_CSV.into(), SAE_SAMPLES_CSV.into()])
}

/// Share of areas where area-level selection beats the baseline, and share
/// where unit-level selection is within 20% of it.
pub fn sae_summary(res: &DesignSimResult) -> (f64, f64) {
    let q = res.areas.len() as f64;
    let better = res.areas.iter().filter(|a| a.ratio_area < 1.0).count() as f64;
    let similar = res.areas.iter().filter(|a| (0.8..=1.2).contains(&a.ratio_unit)).count() as f64;
    (better / q, similar / q)
}
