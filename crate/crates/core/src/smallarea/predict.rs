use nalgebra::DVector;
use serde::Serialize;

use super::data::{NermData, PredictiveMode, UnsampledCovariates};
use super::design::build_observed;
use super::psi::{estimate_psi_for, PsiEstimate};
use crate::error::{LmmError, Result};
use crate::lmm::{CandidateModel, DesignSet, Lmm, ObservedFit};

/// Prediction for the unsampled part of one area.
#[derive(Debug, Clone, PartialEq)]
pub enum UnsampledPrediction {
    /// One value per unsampled unit.
    Units(DVector<f64>),
    /// Mean over the `r_i` unsampled units.
    Mean(f64),
}

/// Conditional mean and common conditional variance of the unsampled log
/// responses of one area under the fitted NERM.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mu: DVector<f64>,
    pub variance: f64,
}

fn unit_block(data: &NermData, i: usize) -> Result<&nalgebra::DMatrix<f64>> {
    match &data.areas()[i].unsampled {
        UnsampledCovariates::Units(xt) => Ok(xt),
        UnsampledCovariates::AreaMean(_) => Err(LmmError::InvalidData(format!(
            "area {} has no unit-level covariates for the unsampled units",
            data.areas()[i].id
        ))),
    }
}

/// `mu_ik = x_ik^T beta + tau2 / (sigma2 + n_i tau2) sum_k' (y_ik' - x_ik'^T beta)`
/// and `V_i = sigma2 + tau2 sigma2 / (sigma2 + n_i tau2)`.
pub fn conditional_moments(
    data: &NermData,
    candidate: &CandidateModel,
    beta: &DVector<f64>,
    psi: &PsiEstimate,
) -> Result<Vec<ConditionalMoments>> {
    let idx = candidate.indices();
    if beta.len() != idx.len() {
        return Err(LmmError::Dimension(format!(
            "beta has length {}, candidate has {} covariates",
            beta.len(),
            idx.len()
        )));
    }
    let (t2, s2) = (psi.tau2_hat, psi.sigma2_hat);
    data.areas()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let xt = unit_block(data, i)?.select_columns(idx);
            let resid_sum = (&a.y - a.x.select_columns(idx) * beta).sum();
            let denom = s2 + a.n_sampled() as f64 * t2;
            let shrink = t2 / denom;
            let mu = (xt * beta).add_scalar(shrink * resid_sum);
            Ok(ConditionalMoments {
                mu,
                variance: s2 + t2 * s2 / denom,
            })
        })
        .collect()
}

/// Log-normal empirical best predictor `exp(mu_ik + V_i / 2)` of each
/// unsampled unit.
pub fn ebp_log_scale(
    data: &NermData,
    candidate: &CandidateModel,
    beta: &DVector<f64>,
    psi: &PsiEstimate,
) -> Result<Vec<UnsampledPrediction>> {
    Ok(conditional_moments(data, candidate, beta, psi)?
        .into_iter()
        .map(|c| UnsampledPrediction::Units(c.mu.map(|m| (m + 0.5 * c.variance).exp())))
        .collect())
}

/// EBLUP `x^T beta_hat + b_hat_i` of the unsampled units (unit mode) or of
/// their mean (area mode, which rejects fully sampled areas).
pub fn eblup_unsampled(
    data: &NermData,
    fit: &ObservedFit,
    mode: PredictiveMode,
) -> Result<Vec<UnsampledPrediction>> {
    let idx = fit.candidate.indices();
    data.areas()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let b = fit.b_hat[i];
            match mode {
                PredictiveMode::Unit => {
                    let xt = unit_block(data, i)?.select_columns(idx);
                    Ok(UnsampledPrediction::Units((xt * &fit.beta_hat).add_scalar(b)))
                }
                PredictiveMode::Area => {
                    let xbar = a.unsampled_mean()?;
                    let xbar_j = DVector::from_iterator(idx.len(), idx.iter().map(|&c| xbar[c]));
                    Ok(UnsampledPrediction::Mean(xbar_j.dot(&fit.beta_hat) + b))
                }
            }
        })
        .collect()
}

/// `N_i^{-1} (sum of sampled values + r_i x unsampled prediction mean)`.
///
/// With `exp_sampled`, sampled responses are on the log scale and enter as
/// `exp(y_ik)`.
pub fn predict_finite_mean(data: &NermData, preds: &[UnsampledPrediction], exp_sampled: bool) -> Result<Vec<f64>> {
    if preds.len() != data.q() {
        return Err(LmmError::Dimension(format!(
            "{} predictions for {} areas",
            preds.len(),
            data.q()
        )));
    }
    data.areas()
        .iter()
        .zip(preds)
        .map(|(a, p)| {
            let r = a.n_unsampled();
            let sampled: f64 = if exp_sampled {
                a.y.iter().map(|v| v.exp()).sum()
            } else {
                a.y.sum()
            };
            let unsampled = match p {
                UnsampledPrediction::Units(v) if v.len() == r => v.sum(),
                UnsampledPrediction::Mean(m) if r > 0 => r as f64 * m,
                _ => {
                    return Err(LmmError::InvalidData(format!(
                        "prediction for area {} does not cover its {r} unsampled units",
                        a.id
                    )))
                }
            };
            Ok((sampled + unsampled) / a.population_size as f64)
        })
        .collect()
}

/// Model-specific fit used for prediction after selection.
#[derive(Debug, Clone, Serialize)]
pub struct AreaPredictions {
    pub psi: PsiEstimate,
    pub finite_means: Vec<f64>,
}

/// Re-estimates the variance components with the candidate's covariates,
/// fits it by GLS and predicts each area's finite-population mean: the EBP
/// of `exp(y)` when `log_scale`, the linear EBLUP otherwise.
pub fn predict_area_means(
    data: &NermData,
    candidate: &CandidateModel,
    mode: PredictiveMode,
    log_scale: bool,
) -> Result<AreaPredictions> {
    let psi = estimate_psi_for(data, candidate)?;
    let fit = fit_candidate(data, candidate, psi.psi_hat)?;
    let preds = if log_scale {
        if !data.has_unit_coverage() {
            return Err(LmmError::InvalidData(
                "log-scale prediction needs unit-level covariates for unsampled units".into(),
            ));
        }
        ebp_log_scale(data, candidate, &fit.beta_hat, &psi)?
    } else {
        eblup_unsampled(data, &fit, mode)?
    };
    Ok(AreaPredictions {
        psi,
        finite_means: predict_finite_mean(data, &preds, log_scale)?,
    })
}

/// GLS fit of a candidate with `G = psi I`; the returned fit indexes the
/// candidate's columns in the original numbering.
pub fn fit_candidate(data: &NermData, candidate: &CandidateModel, psi: f64) -> Result<ObservedFit> {
    let obs = build_observed(data, psi)?;
    let x_j = obs.x.select_columns(candidate.indices());
    let lmm = Lmm::new(DesignSet::no_shift(x_j, obs.z, obs.g, obs.r)?)?;
    let mut fit = lmm.gls_fit(&obs.y, &CandidateModel::full(candidate.size()))?;
    fit.candidate = candidate.clone();
    Ok(fit)
}
