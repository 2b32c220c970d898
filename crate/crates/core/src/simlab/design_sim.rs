use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::population::{
    draw_area_sample, generate_synthetic_population, GeneratorParams, SyntheticPopulation, LAND_PRICE_COVARIATES,
};
use crate::criteria::{select_best, BootstrapConfig, Variant};
use crate::error::{LmmError, Result};
use crate::lmm::{CandidateModel, DesignSet, Lmm};
use crate::rng::{self, derive_seed};
use crate::smallarea::{
    estimate_psi, nerm_design, nerm_design_no_shift, predict_area_means, AreaRecord, NermData, PredictiveMode,
    UnsampledCovariates,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSimConfig {
    pub q: usize,
    pub n: usize,
    pub population_size: usize,
    pub samples: usize,
    pub seed: u64,
    /// Criterion used with the shifted predictive designs.
    pub variant: Variant,
    pub boot_reps: usize,
    pub generator: GeneratorParams,
}

impl Default for DesignSimConfig {
    fn default() -> Self {
        DesignSimConfig {
            q: 47,
            n: 189,
            population_size: 1000,
            samples: 200,
            seed: 2001,
            variant: Variant::Hat,
            boot_reps: 1000,
            generator: GeneratorParams::default(),
        }
    }
}

impl DesignSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < self.n {
            return Err(LmmError::InvalidConfig(format!(
                "population size {} below sample size {}",
                self.population_size, self.n
            )));
        }
        if self.samples == 0 {
            return Err(LmmError::InvalidConfig("samples must be positive".into()));
        }
        if self.variant == Variant::Dagger {
            BootstrapConfig::new(self.boot_reps, 0).validate()?;
        }
        Ok(())
    }
}

/// The 2^7 candidates: intercept plus any subset of the seven covariates.
pub fn land_price_candidates() -> Vec<CandidateModel> {
    let k = LAND_PRICE_COVARIATES - 1;
    (0..1usize << k)
        .map(|mask| {
            let idx = std::iter::once(0).chain((0..k).filter(|b| mask >> b & 1 == 1).map(|b| b + 1));
            CandidateModel::new(idx, LAND_PRICE_COVARIATES).expect("valid by construction")
        })
        .collect()
}

/// Sampled log prices with unit-level coverage of the unsampled units.
pub fn sample_to_nerm(pop: &SyntheticPopulation, sample: &[Vec<usize>]) -> Result<NermData> {
    let offsets = pop.offsets();
    let row = |k: usize| DVector::from_row_slice(&pop.units[k].covariates()).transpose();
    let areas = sample
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let all = offsets[i]..offsets[i] + pop.area_sizes[i];
            let rest: Vec<usize> = all.filter(|k| idx.binary_search(k).is_err()).collect();
            let rows_of = |ks: &[usize]| {
                let mut m = DMatrix::zeros(ks.len(), LAND_PRICE_COVARIATES);
                for (r, &k) in ks.iter().enumerate() {
                    m.set_row(r, &row(k));
                }
                m
            };
            AreaRecord {
                id: format!("{}", i + 1),
                population_size: pop.area_sizes[i],
                y: DVector::from_iterator(idx.len(), idx.iter().map(|&k| pop.units[k].price.ln())),
                x: rows_of(idx),
                unsampled: UnsampledCovariates::Units(rows_of(&rest)),
            }
        })
        .collect();
    NermData::new(areas)
}

/// The baseline criterion: variant `U` with the observed design as its own
/// predictive design.
pub fn conventional_caic_baseline(y: &DVector<f64>, no_shift: &Lmm, candidate: &CandidateModel) -> Result<f64> {
    Ok(crate::criteria::criterion(Variant::U, y, no_shift, candidate, None)?.total)
}

/// Models chosen on one sample and the resulting area-mean predictions.
#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    pub sample: usize,
    pub attempts: usize,
    pub psi_hat: f64,
    pub psi_truncated: bool,
    pub selected_unit: CandidateModel,
    pub selected_area: CandidateModel,
    pub selected_baseline: CandidateModel,
    pub pred_unit: Vec<f64>,
    pub pred_area: Vec<f64>,
    pub pred_baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaMse {
    pub area: usize,
    pub population_size: usize,
    pub sample_size: usize,
    pub true_mean: f64,
    pub mse_unit: f64,
    pub mse_area: f64,
    pub mse_baseline: f64,
    pub ratio_unit: f64,
    pub ratio_area: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSimResult {
    pub config: DesignSimConfig,
    pub areas: Vec<AreaMse>,
    pub samples: Vec<SampleOutcome>,
    pub redrawn: usize,
    pub true_means: Vec<f64>,
}

fn select_on_sample(data: &NermData, cfg: &DesignSimConfig, sample: usize, candidates: &[CandidateModel]) -> Result<SampleOutcome> {
    let psi = estimate_psi(data)?;
    let boot = BootstrapConfig::new(cfg.boot_reps, derive_seed(cfg.seed, &[21, sample as u64]));
    let boot = (cfg.variant == Variant::Dagger).then_some(&boot);
    let best = |design: DesignSet, y: &DVector<f64>, variant: Variant| -> Result<CandidateModel> {
        let lmm = Lmm::new(design)?;
        let sel = select_best(y, &lmm, candidates, variant, boot)?;
        sel.best()
            .map(|b| b.candidate.clone())
            .ok_or_else(|| LmmError::Simulation("no candidate could be evaluated".into()))
    };
    let (y, unit_design) = nerm_design(data, psi.psi_hat, PredictiveMode::Unit)?;
    let (_, area_design) = nerm_design(&data.to_area_means(), psi.psi_hat, PredictiveMode::Area)?;
    let (_, base_design) = nerm_design_no_shift(data, psi.psi_hat)?;
    let selected_unit = best(unit_design, &y, cfg.variant)?;
    let selected_area = best(area_design, &y, cfg.variant)?;
    let selected_baseline = best(base_design, &y, Variant::U)?;

    let mut cache: BTreeMap<CandidateModel, Vec<f64>> = BTreeMap::new();
    for c in [&selected_unit, &selected_area, &selected_baseline] {
        if !cache.contains_key(c) {
            let p = predict_area_means(data, c, PredictiveMode::Unit, true)?;
            cache.insert(c.clone(), p.finite_means);
        }
    }
    Ok(SampleOutcome {
        sample,
        attempts: 0,
        psi_hat: psi.psi_hat,
        psi_truncated: psi.truncated,
        pred_unit: cache[&selected_unit].clone(),
        pred_area: cache[&selected_area].clone(),
        pred_baseline: cache[&selected_baseline].clone(),
        selected_unit,
        selected_area,
        selected_baseline,
    })
}

/// Attempts per sample before the design simulation gives up on it.
const MAX_SAMPLE_ATTEMPTS: usize = 8;

pub fn run_design_sim_on(pop: &SyntheticPopulation, cfg: &DesignSimConfig) -> Result<DesignSimResult> {
    cfg.validate()?;
    let candidates = land_price_candidates();
    let outcomes: Vec<SampleOutcome> = (0..cfg.samples)
        .into_par_iter()
        .map(|t| {
            let mut last = None;
            for attempt in 0..MAX_SAMPLE_ATTEMPTS {
                let mut rng = rng::stream(cfg.seed, &[20, t as u64, attempt as u64]);
                let sample = draw_area_sample(pop, &mut rng);
                let res = sample_to_nerm(pop, &sample).and_then(|d| select_on_sample(&d, cfg, t, &candidates));
                match res {
                    Ok(mut o) => {
                        o.attempts = attempt + 1;
                        return Ok(o);
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect::<Result<_>>()?;

    let redrawn: usize = outcomes.iter().map(|o| o.attempts - 1).sum();
    if redrawn * 100 > cfg.samples {
        return Err(LmmError::Simulation(format!(
            "{redrawn} of {} samples had to be redrawn (limit 1%)",
            cfg.samples
        )));
    }
    let truth = pop.area_means();
    let areas = area_mse(pop, &truth, &outcomes);
    Ok(DesignSimResult {
        config: cfg.clone(),
        areas,
        samples: outcomes,
        redrawn,
        true_means: truth,
    })
}

/// Per-area MSE of the three predictors, summed in sample order.
pub fn area_mse(pop: &SyntheticPopulation, truth: &[f64], outcomes: &[SampleOutcome]) -> Vec<AreaMse> {
    let t = outcomes.len() as f64;
    (0..pop.q())
        .map(|i| {
            let mse = |f: &dyn Fn(&SampleOutcome) -> f64| outcomes.iter().map(|o| (f(o) - truth[i]).powi(2)).sum::<f64>() / t;
            let mse_unit = mse(&|o| o.pred_unit[i]);
            let mse_area = mse(&|o| o.pred_area[i]);
            let mse_baseline = mse(&|o| o.pred_baseline[i]);
            AreaMse {
                area: i + 1,
                population_size: pop.area_sizes[i],
                sample_size: pop.sample_sizes[i],
                true_mean: truth[i],
                mse_unit,
                mse_area,
                mse_baseline,
                ratio_unit: mse_unit / mse_baseline,
                ratio_area: mse_area / mse_baseline,
            }
        })
        .collect()
}

pub fn run_design_sim(cfg: &DesignSimConfig) -> Result<(SyntheticPopulation, DesignSimResult)> {
    cfg.validate()?;
    let pop = generate_synthetic_population(cfg.q, cfg.n, cfg.population_size, &cfg.generator, cfg.seed)?;
    let res = run_design_sim_on(&pop, cfg)?;
    Ok((pop, res))
}
