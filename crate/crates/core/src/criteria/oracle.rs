//! Monte Carlo evaluation of the conditional Akaike information itself,
//! for use when the true parameters are known.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use super::geometry::ShiftGeometry;
use crate::error::{LmmError, Result};
use crate::lmm::{Lmm, Response, TruthParams};
use crate::rng;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub draws: usize,
}

impl McEstimate {
    /// Mean and standard error of `values`, summed in slice order.
    pub fn from_samples(values: &[f64]) -> Self {
        let k = values.len();
        let mean = values.iter().sum::<f64>() / k as f64;
        let var = if k > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        McEstimate {
            mean,
            se: (var / k as f64).sqrt(),
            draws: k,
        }
    }
}

pub const MIN_ORACLE_ITERATIONS: usize = 1000;

/// The integrand of the conditional Akaike information for one observed
/// response: `m log(2 pi s2_j) + log|Rt| + (tr(Rt^{-1} Lambda) s2_* + a^T Rt^{-1} a) / s2_j`.
pub fn cai_draw(lmm: &Lmm, geom: &ShiftGeometry, resp: &Response, truth: &TruthParams) -> Result<f64> {
    let fit = lmm.fit_prepared(geom.solve(), resp)?;
    let mut d = -truth.beta_star.clone();
    for (k, &col) in geom.candidate.indices().iter().enumerate() {
        d[col] += fit.beta_hat[k];
    }
    let a_quad = d.dot(&(lmm.shift_gram() * &d));
    let s = fit.sigma2_hat;
    Ok(geom.m as f64 * (2.0 * PI * s).ln()
        + geom.log_det_rt
        + (geom.trace_rt_inv_lambda * truth.sigma2_star + a_quad) / s)
}

/// Monte Carlo cAI for several candidates on common simulated responses.
pub fn mc_true_cai_many(
    lmm: &Lmm,
    geoms: &[ShiftGeometry],
    truth: &TruthParams,
    iterations: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if iterations < MIN_ORACLE_ITERATIONS {
        return Err(LmmError::InvalidConfig(format!(
            "oracle needs at least {MIN_ORACLE_ITERATIONS} iterations, got {iterations}"
        )));
    }
    if truth.beta_star.len() != lmm.p_omega() {
        return Err(LmmError::Dimension(format!(
            "beta_star has length {}, expected {}",
            truth.beta_star.len(),
            lmm.p_omega()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = rng::stream(seed, &[it as u64]);
            let y: DVector<f64> = lmm.simulate_response(truth, &mut rng);
            let resp = lmm.response(&y)?;
            geoms.iter().map(|g| cai_draw(lmm, g, &resp, truth)).collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..geoms.len())
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            McEstimate::from_samples(&col)
        })
        .collect())
}

pub fn mc_true_cai(
    lmm: &Lmm,
    geom: &ShiftGeometry,
    truth: &TruthParams,
    iterations: usize,
    seed: u64,
) -> Result<McEstimate> {
    Ok(mc_true_cai_many(lmm, std::slice::from_ref(geom), truth, iterations, seed)?[0])
}
