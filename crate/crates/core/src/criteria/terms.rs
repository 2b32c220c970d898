use nalgebra::DVector;
use serde::Serialize;

use super::geometry::ShiftGeometry;
use crate::error::{LmmError, Result};
use crate::lmm::{ModelParams, ObservedFit, TruthParams};

/// Bias terms of the cAI expansion evaluated at the true parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueRTerms {
    pub delta: f64,
    pub lambda: f64,
    pub r_star: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

/// `R* = n gamma / (n - p_j - 2)`; requires `n > p_j + 2`.
pub fn r_star(gamma: f64, n: usize, p_j: usize) -> Result<f64> {
    if n <= p_j + 2 {
        return Err(LmmError::InsufficientDegreesOfFreedom(format!(
            "R* needs n > p_j + 2 (n = {n}, p_j = {p_j})"
        )));
    }
    Ok(n as f64 * gamma / (n - p_j - 2) as f64)
}

/// `(-2 l^3 + (p_j + 4) l^2)` shared by `R2` and `R4`.
fn cubic_lead(lambda: f64, p_j: usize) -> f64 {
    -2.0 * lambda.powi(3) + (p_j as f64 + 4.0) * lambda * lambda
}

pub fn true_r_terms(geom: &ShiftGeometry, truth: &TruthParams) -> Result<TrueRTerms> {
    let r_star = r_star(geom.gamma, geom.n, geom.p_j)?;
    let eval = r3_r4_at(geom, &truth.as_params());
    let n = geom.n as f64;
    let p_j = geom.p_j as f64;
    let lambda = eval.lambda;
    Ok(TrueRTerms {
        delta: eval.delta,
        lambda,
        r_star,
        r1: geom.gamma * (lambda - 1.0),
        r2: geom.gamma * (cubic_lead(lambda, geom.p_j) - (p_j + 2.0)) / n,
        r3: eval.r3,
        r4: eval.r4,
    })
}

/// Unbiased (for overspecified candidates) estimates of `lambda`, `lambda^2`
/// and `lambda^3` built from the variance ratio of the full and candidate fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaHats {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

pub fn lambda_hats(
    fit_j: &ObservedFit,
    fit_omega: &ObservedFit,
    n: usize,
    p_j: usize,
    p_omega: usize,
) -> Result<LambdaHats> {
    lambda_hats_from_variances(fit_j.sigma2_hat, fit_omega.sigma2_hat, n, p_j, p_omega)
}

pub fn lambda_hats_from_variances(
    sigma2_j: f64,
    sigma2_omega: f64,
    n: usize,
    p_j: usize,
    p_omega: usize,
) -> Result<LambdaHats> {
    if !(sigma2_j > 0.0) {
        return Err(LmmError::DegenerateFit);
    }
    if n <= p_omega || p_j > p_omega {
        return Err(LmmError::InsufficientDegreesOfFreedom(format!(
            "lambda estimates need n > p_omega >= p_j (n = {n}, p_omega = {p_omega}, p_j = {p_j})"
        )));
    }
    let ratio = sigma2_omega / sigma2_j;
    let (nj, nw) = ((n - p_j) as f64, (n - p_omega) as f64);
    let c1 = nj / nw;
    let c2 = c1 * (nj + 2.0) / (nw + 2.0);
    let c3 = c2 * (nj + 4.0) / (nw + 4.0);
    Ok(LambdaHats {
        l1: c1 * ratio,
        l2: c2 * ratio * ratio,
        l3: c3 * ratio * ratio * ratio,
    })
}

/// Second-order unbiased estimate of `R1 = gamma (lambda - 1)`.
pub fn r1_hat(gamma: f64, lh: &LambdaHats, n: usize, p_j: usize) -> f64 {
    let pj = p_j as f64;
    let drift = (-2.0 * lh.l3 + (pj + 2.0) * lh.l2 - pj * lh.l1) / n as f64;
    gamma * (lh.l1 - drift - 1.0)
}

pub fn r2_hat(gamma: f64, lh: &LambdaHats, n: usize, p_j: usize) -> f64 {
    let pj = p_j as f64;
    gamma * (-2.0 * lh.l3 + (pj + 4.0) * lh.l2 - (pj + 2.0)) / n as f64
}

/// `R3` and `R4` as functions of `(beta, sigma2)` with their ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct R34Eval {
    pub delta: f64,
    pub lambda: f64,
    /// `beta^T B^T Rt^{-1} B beta / sigma2`.
    pub quad: f64,
    pub r3: f64,
    pub r4: f64,
}

pub fn r3_r4_at(geom: &ShiftGeometry, eta: &ModelParams) -> R34Eval {
    let beta = &eta.beta;
    let s = eta.sigma2;
    let n = geom.n as f64;
    let delta = beta.dot(&(&geom.c * beta)) / (n * s);
    let lambda = 1.0 / (1.0 + delta);
    let quad = beta.dot(&(&geom.bt_rinv_b * beta)) / s;
    R34Eval {
        delta,
        lambda,
        quad,
        r3: lambda * quad,
        r4: cubic_lead(lambda, geom.p_j) / n * quad,
    }
}

/// Second-order bias of the plug-in `R3`: half the Hessian of `R3` in
/// `beta` and in `sigma2`, contracted with the sampling covariances
/// `sigma2 F^{-1}` and `2 sigma2^2 / (n - p_omega)`.
pub fn b1_correction(geom: &ShiftGeometry, eta: &ModelParams) -> f64 {
    let beta = &eta.beta;
    let s = eta.sigma2;
    let n = geom.n as f64;
    let v = &geom.info_inv;
    let c_beta: DVector<f64> = &geom.c * beta;
    let m_beta: DVector<f64> = &geom.bt_rinv_b * beta;
    let q = beta.dot(&m_beta);
    let cq = beta.dot(&c_beta);
    let delta = cq / (n * s);
    let one_d = 1.0 + delta;
    let lambda = 1.0 / one_d;
    let v_c_beta = v * &c_beta;

    // tr(H_beta V), expanded term by term.
    let tr_hv = (q / s)
        * (-2.0 * geom.trace_c_info_inv / (n * s * one_d * one_d)
            + 8.0 * c_beta.dot(&v_c_beta) / (n * n * s * s * one_d.powi(3)))
        - 8.0 * m_beta.dot(&v_c_beta) / (n * s * s * one_d * one_d)
        + 2.0 * lambda * geom.trace_m_info_inv / s;

    let d2_sigma = (q / s)
        * (-2.0 * cq / (n * s.powi(3) * one_d * one_d) + 2.0 * cq * cq / (n * n * s.powi(4) * one_d.powi(3)))
        - 2.0 * q * cq / (n * s.powi(4) * one_d * one_d)
        + 2.0 * lambda * q / s.powi(3);

    let var_sigma = 2.0 * s * s / (geom.n - geom.p_omega) as f64;
    0.5 * s * tr_hv + 0.5 * d2_sigma * var_sigma
}

/// Plug-in estimates of `R3`, `R4` at the full-model unbiased estimates and
/// the analytically bias-corrected `R3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginTerms {
    pub r3_tilde: f64,
    pub r4_tilde: f64,
    pub b1: f64,
    pub r3_tilde_tilde: f64,
}

pub fn r3_r4_plugin(geom: &ShiftGeometry, eta: &ModelParams) -> PluginTerms {
    let eval = r3_r4_at(geom, eta);
    let b1 = b1_correction(geom, eta);
    PluginTerms {
        r3_tilde: eval.r3,
        r4_tilde: eval.r4,
        b1,
        r3_tilde_tilde: eval.r3 - b1,
    }
}
