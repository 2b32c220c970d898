use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::data::NermData;
use crate::error::{LmmError, Result};
use crate::linalg::{column_rank, RANK_TOLERANCE, SpdFactor};
use crate::lmm::CandidateModel;

/// Fitting-of-constants estimates of the area and unit variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiEstimate {
    pub tau2_hat: f64,
    pub sigma2_hat: f64,
    pub psi_hat: f64,
    /// Moment estimate of `tau2` before truncation at zero.
    pub tau2_raw: f64,
    pub truncated: bool,
}

/// Prasad-Rao estimates from the full covariate set.
pub fn estimate_psi(data: &NermData) -> Result<PsiEstimate> {
    estimate_psi_moments(&data.y(), &data.x(), &data.sample_sizes())
}

/// Prasad-Rao estimates using only the candidate's covariates.
pub fn estimate_psi_for(data: &NermData, candidate: &CandidateModel) -> Result<PsiEstimate> {
    let x = data.x().select_columns(candidate.indices());
    estimate_psi_moments(&data.y(), &x, &data.sample_sizes())
}

/// `sigma2` from the within-area (demeaned) least squares residuals;
/// `tau2` from the pooled least squares residuals minus their expectation
/// under `tau2 = 0`, divided by
/// `n* = n - tr((X^T X)^{-1} sum_i n_i^2 xbar_i xbar_i^T)`.
pub fn estimate_psi_moments(y: &DVector<f64>, x: &DMatrix<f64>, sizes: &[usize]) -> Result<PsiEstimate> {
    let (n, p) = x.shape();
    let q = sizes.len();
    if y.len() != n || sizes.iter().sum::<usize>() != n {
        return Err(LmmError::Dimension("area sizes do not match the response".into()));
    }

    let mut y_w = y.clone();
    let mut x_w = x.clone();
    let mut xbar_outer = DMatrix::<f64>::zeros(p, p);
    let mut start = 0;
    for &s in sizes {
        let y_mean = y.rows(start, s).mean();
        let x_mean: DVector<f64> = x.rows(start, s).row_mean().transpose();
        for k in start..start + s {
            y_w[k] -= y_mean;
            for c in 0..p {
                x_w[(k, c)] -= x_mean[c];
            }
        }
        xbar_outer += &x_mean * x_mean.transpose() * (s * s) as f64;
        start += s;
    }

    let rank_w = column_rank(&x_w, RANK_TOLERANCE);
    let dof_w = n as i64 - q as i64 - rank_w as i64;
    if dof_w <= 0 {
        return Err(LmmError::InsufficientDegreesOfFreedom(format!(
            "within-area regression has {dof_w} degrees of freedom (n = {n}, q = {q}, rank = {rank_w})"
        )));
    }
    if n <= p {
        return Err(LmmError::InsufficientDegreesOfFreedom(format!("n = {n} must exceed p = {p}")));
    }
    let sse_w = residual_ss(&x_w, &y_w)?;
    let sigma2_hat = sse_w / dof_w as f64;
    if !(sigma2_hat > 0.0) {
        return Err(LmmError::DegenerateFit);
    }

    let xtx = SpdFactor::new(&(x.transpose() * x), "X^T X")?;
    let sse = residual_ss(x, y)?;
    let n_star = n as f64 - xtx.solve_mat(&xbar_outer).trace();
    if !(n_star > 0.0) {
        return Err(LmmError::InsufficientDegreesOfFreedom(
            "area effects are not identifiable from the pooled regression".into(),
        ));
    }
    let tau2_raw = (sse - (n - p) as f64 * sigma2_hat) / n_star;
    let truncated = tau2_raw < 0.0;
    let tau2_hat = tau2_raw.max(0.0);
    Ok(PsiEstimate {
        tau2_hat,
        sigma2_hat,
        psi_hat: tau2_hat / sigma2_hat,
        tau2_raw,
        truncated,
    })
}

/// Residual sum of squares of the minimum-norm least squares fit.
fn residual_ss(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let coef = svd
        .solve(y, RANK_TOLERANCE * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| LmmError::Simulation(format!("least squares failed: {e}")))?;
    Ok((y - x * coef).norm_squared())
}
