use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{
    mc_true_cai_many, shift_geometry, true_r_terms, BootstrapConfig, CriterionBreakdown, ErrorScale, Evaluator,
    McEstimate, ShiftGeometry, Variant,
};
use crate::error::{LmmError, Result};
use crate::lmm::{CandidateModel, Lmm, TruthParams};
use crate::linalg::SpdFactor;
use crate::rng::{self, derive_seed};
use crate::smallarea::{nerm_design, AreaRecord, NermData, PredictiveMode, UnsampledCovariates};

/// Estimator-bias study on nested candidates `{0}, {0,1}, ..., {0..p_omega-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasExperimentConfig {
    pub q: usize,
    pub n_i: usize,
    pub r_i: usize,
    pub p_omega: usize,
    pub p_star: usize,
    /// Off-diagonal correlation of the covariates.
    pub covariate_correlation: f64,
    /// `beta_l = scale (-1)^l / (l + offset) U(lo, hi)` for `l <= p_star`.
    pub beta_scale: f64,
    pub beta_offset: f64,
    pub beta_uniform: (f64, f64),
    pub sigma2: f64,
    pub tau2: f64,
    pub predictive_mode: PredictiveMode,
    pub outer_reps: usize,
    pub oracle_reps: usize,
    pub boot_reps: usize,
    pub seed: u64,
}

impl Default for BiasExperimentConfig {
    fn default() -> Self {
        BiasExperimentConfig {
            q: 10,
            n_i: 3,
            r_i: 3,
            p_omega: 7,
            p_star: 5,
            covariate_correlation: 0.1,
            beta_scale: 2.0,
            beta_offset: 0.7,
            beta_uniform: (1.0, 2.0),
            sigma2: 1.0,
            tau2: 1.0,
            predictive_mode: PredictiveMode::Unit,
            outer_reps: 1000,
            oracle_reps: 10_000,
            boot_reps: 1000,
            seed: 20_200_101,
        }
    }
}

pub const MIN_OUTER_REPS: usize = 100;

impl BiasExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LmmError::InvalidConfig(m));
        if self.p_star == 0 || self.p_star > self.p_omega {
            return fail(format!("need 1 <= p_star <= p_omega (p_star = {}, p_omega = {})", self.p_star, self.p_omega));
        }
        if self.outer_reps < MIN_OUTER_REPS {
            return fail(format!("outer_reps must be at least {MIN_OUTER_REPS}, got {}", self.outer_reps));
        }
        if self.q == 0 || self.n_i == 0 || self.r_i == 0 {
            return fail("q, n_i and r_i must be positive".into());
        }
        if self.q * self.n_i <= self.p_omega + 2 {
            return fail(format!("n = {} must exceed p_omega + 2", self.q * self.n_i));
        }
        if !(self.sigma2 > 0.0) || !(self.tau2 >= 0.0) {
            return fail("sigma2 must be positive and tau2 nonnegative".into());
        }
        let rho = self.covariate_correlation;
        if !(rho > -1.0 / (self.p_omega as f64 - 1.0).max(1.0) && rho < 1.0) {
            return fail(format!("covariate correlation {rho} does not give a positive definite covariance"));
        }
        if !(self.beta_uniform.0 < self.beta_uniform.1) {
            return fail("beta_uniform must be an increasing interval".into());
        }
        BootstrapConfig::new(self.boot_reps, 0).validate()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.q * self.n_i
    }
}

/// Fixed ingredients of one bias study: design, truth and candidates.
#[derive(Debug, Clone)]
pub struct BiasSetup {
    pub data: NermData,
    pub lmm: Lmm,
    pub truth: TruthParams,
    pub candidates: Vec<CandidateModel>,
    pub geoms: Vec<ShiftGeometry>,
}

/// `Sigma_x = (1 - rho) I + rho J` draws for `rows` units.
pub fn correlated_covariates<R: Rng + ?Sized>(rows: usize, p: usize, rho: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    let factor = SpdFactor::new(&cov, "Sigma_x")?;
    let mut x = DMatrix::zeros(rows, p);
    for k in 0..rows {
        let z = crate::lmm::standard_normal_vec(p, rng);
        x.set_row(k, &factor.mul_lower(&z).transpose());
    }
    Ok(x)
}

pub fn draw_beta<R: Rng + ?Sized>(cfg: &BiasExperimentConfig, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(cfg.p_omega, |i, _| {
        let l = i + 1;
        if l > cfg.p_star {
            return 0.0;
        }
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        let u: f64 = rng.random_range(cfg.beta_uniform.0..cfg.beta_uniform.1);
        cfg.beta_scale * sign / (l as f64 + cfg.beta_offset) * u
    })
}

/// Draws the covariates of `q` areas with `n_i` sampled and `r_i` unsampled
/// units each; responses are placeholders.
pub fn draw_bias_areas<R: Rng + ?Sized>(cfg: &BiasExperimentConfig, copies: usize, rng: &mut R) -> Result<NermData> {
    let per_area = cfg.n_i + cfg.r_i;
    let x = correlated_covariates(cfg.q * per_area, cfg.p_omega, cfg.covariate_correlation, rng)?;
    let mut areas = Vec::with_capacity(cfg.q * copies);
    for copy in 0..copies {
        for i in 0..cfg.q {
            let block = x.rows(i * per_area, per_area);
            areas.push(AreaRecord {
                id: format!("{}", copy * cfg.q + i + 1),
                population_size: per_area,
                y: DVector::zeros(cfg.n_i),
                x: block.rows(0, cfg.n_i).into_owned(),
                unsampled: UnsampledCovariates::Units(block.rows(cfg.n_i, cfg.r_i).into_owned()),
            });
        }
    }
    let data = NermData::new(areas)?;
    Ok(match cfg.predictive_mode {
        PredictiveMode::Unit => data,
        PredictiveMode::Area => data.to_area_means(),
    })
}

/// Draws covariates and coefficients once. With `copies > 1` the areas are
/// replicated, giving a larger member of the same design family.
pub fn bias_setup(cfg: &BiasExperimentConfig, copies: usize) -> Result<BiasSetup> {
    cfg.validate()?;
    let mut design_rng = rng::stream(cfg.seed, &[0]);
    let data = draw_bias_areas(cfg, copies.max(1), &mut design_rng)?;
    let beta = draw_beta(cfg, &mut rng::stream(cfg.seed, &[1]));
    let (_, design) = nerm_design(&data, cfg.tau2 / cfg.sigma2, cfg.predictive_mode)?;
    let lmm = Lmm::new(design)?;
    let truth = TruthParams::new(beta, cfg.sigma2)?;
    let candidates: Vec<CandidateModel> = (1..=cfg.p_omega)
        .map(|a| CandidateModel::leading(a, cfg.p_omega))
        .collect::<Result<_>>()?;
    let geoms = candidates
        .iter()
        .map(|c| shift_geometry(&lmm, c))
        .collect::<Result<_>>()?;
    Ok(BiasSetup {
        data,
        lmm,
        truth,
        candidates,
        geoms,
    })
}

/// Criterion breakdowns of every candidate and variant on `reps` simulated
/// responses: `out[rep][candidate][variant]` in [`Variant::ALL`] order.
pub fn simulate_breakdowns(
    setup: &BiasSetup,
    reps: usize,
    boot_reps: usize,
    seed: u64,
) -> Result<Vec<Vec<[CriterionBreakdown; 3]>>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, &[3, rep as u64]);
            let y = setup.lmm.simulate_response(&setup.truth, &mut rng);
            let boot = BootstrapConfig {
                replications: boot_reps,
                seed: derive_seed(seed, &[4, rep as u64]),
                error_scale: ErrorScale::Identity,
            };
            let eval = Evaluator::new(&setup.lmm, &y)?.with_bootstrap(&boot)?;
            setup
                .geoms
                .iter()
                .map(|g| {
                    let fit = eval.fit(g)?;
                    Ok([
                        eval.evaluate_fit(g, &fit, Variant::U)?,
                        eval.evaluate_fit(g, &fit, Variant::Hat)?,
                        eval.evaluate_fit(g, &fit, Variant::Dagger)?,
                    ])
                })
                .collect()
        })
        .collect()
}

/// A Monte Carlo expectation compared with a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasCell {
    pub mean: f64,
    pub se: f64,
    pub bias: f64,
    /// Combines the estimator and the target's Monte Carlo errors.
    pub bias_se: f64,
    pub relbias: f64,
    pub relbias_se: f64,
}

impl BiasCell {
    pub fn new(estimate: McEstimate, target: f64, target_se: f64) -> Self {
        let bias = estimate.mean - target;
        let bias_se = estimate.se.hypot(target_se);
        BiasCell {
            mean: estimate.mean,
            se: estimate.se,
            bias,
            bias_se,
            relbias: 100.0 * bias / target,
            relbias_se: 100.0 * bias_se / target.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub candidate: CandidateModel,
    pub p_j: usize,
    pub overspecified: bool,
    pub true_cai: f64,
    pub true_cai_se: f64,
    pub u: BiasCell,
    pub hat: BiasCell,
    pub dagger: BiasCell,
    pub true_r3: f64,
    /// Analytically corrected plug-in `R3` (the `HAT` slot).
    pub r3_corrected: BiasCell,
    /// Bootstrap `R3` (the `DAGGER` slot).
    pub r3_bootstrap: BiasCell,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasExperimentResult {
    pub config: BiasExperimentConfig,
    pub beta_star: Vec<f64>,
    pub rows: Vec<BiasRow>,
}

pub fn column_estimate<F>(draws: &[Vec<[CriterionBreakdown; 3]>], cand: usize, f: F) -> McEstimate
where
    F: Fn(&[CriterionBreakdown; 3]) -> f64,
{
    let vals: Vec<f64> = draws.iter().map(|d| f(&d[cand])).collect();
    McEstimate::from_samples(&vals)
}

pub fn run_bias_experiment(cfg: &BiasExperimentConfig) -> Result<BiasExperimentResult> {
    let setup = bias_setup(cfg, 1)?;
    let truth_cai = mc_true_cai_many(&setup.lmm, &setup.geoms, &setup.truth, cfg.oracle_reps, derive_seed(cfg.seed, &[2]))?;
    let draws = simulate_breakdowns(&setup, cfg.outer_reps, cfg.boot_reps, cfg.seed)?;
    let rows = setup
        .geoms
        .iter()
        .enumerate()
        .map(|(c, g)| {
            let t = &truth_cai[c];
            let r = true_r_terms(g, &setup.truth)?;
            let cell = |v: usize| BiasCell::new(column_estimate(&draws, c, |b| b[v].total), t.mean, t.se);
            Ok(BiasRow {
                candidate: g.candidate.clone(),
                p_j: g.p_j,
                overspecified: g.candidate.covers_support(&setup.truth.beta_star),
                true_cai: t.mean,
                true_cai_se: t.se,
                u: cell(0),
                hat: cell(1),
                dagger: cell(2),
                true_r3: r.r3,
                r3_corrected: BiasCell::new(column_estimate(&draws, c, |b| b[1].r3), r.r3, 0.0),
                r3_bootstrap: BiasCell::new(column_estimate(&draws, c, |b| b[2].r3), r.r3, 0.0),
            })
        })
        .collect::<Result<_>>()?;
    Ok(BiasExperimentResult {
        config: cfg.clone(),
        beta_star: setup.truth.beta_star.iter().copied().collect(),
        rows,
    })
}

/// Bias of the two `R3` estimators at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct R3OrderRow {
    pub n: usize,
    pub candidate: CandidateModel,
    pub true_r3: f64,
    pub corrected: BiasCell,
    pub bootstrap: BiasCell,
}

/// `R3` estimator bias on the base design and on `copies`-fold replicated
/// designs with the same covariates and coefficients.
pub fn run_r3_order_study(cfg: &BiasExperimentConfig, copies: &[usize]) -> Result<Vec<R3OrderRow>> {
    let mut rows = Vec::new();
    for &k in copies {
        let setup = bias_setup(cfg, k)?;
        let draws = simulate_breakdowns(&setup, cfg.outer_reps, cfg.boot_reps, derive_seed(cfg.seed, &[5, k as u64]))?;
        for (c, g) in setup.geoms.iter().enumerate() {
            let r3 = true_r_terms(g, &setup.truth)?.r3;
            rows.push(R3OrderRow {
                n: setup.lmm.n(),
                candidate: g.candidate.clone(),
                true_r3: r3,
                corrected: BiasCell::new(column_estimate(&draws, c, |b| b[1].r3), r3, 0.0),
                bootstrap: BiasCell::new(column_estimate(&draws, c, |b| b[2].r3), r3, 0.0),
            });
        }
    }
    Ok(rows)
}
