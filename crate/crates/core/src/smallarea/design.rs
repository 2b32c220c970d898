use nalgebra::{DMatrix, DVector};

use super::data::{NermData, PredictiveMode, UnsampledCovariates};
use crate::error::{LmmError, Result};
use crate::lmm::DesignSet;

/// Observed part of a nested error regression design: `Z = diag(1_{n_i})`,
/// `G = psi I_q`, `R = I_n`.
#[derive(Debug, Clone)]
pub struct ObservedPart {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictivePart {
    pub xt: DMatrix<f64>,
    pub zt: DMatrix<f64>,
    pub rt: DMatrix<f64>,
}

/// `n x q` matrix with a block of ones per area.
pub fn area_indicator(sizes: &[usize]) -> DMatrix<f64> {
    let n: usize = sizes.iter().sum();
    let mut z = DMatrix::zeros(n, sizes.len());
    let mut row = 0;
    for (i, &s) in sizes.iter().enumerate() {
        z.view_mut((row, i), (s, 1)).fill(1.0);
        row += s;
    }
    z
}

pub fn build_observed(data: &NermData, psi: f64) -> Result<ObservedPart> {
    if !(psi >= 0.0) || !psi.is_finite() {
        return Err(LmmError::InvalidConfig(format!("variance ratio must be finite and nonnegative, got {psi}")));
    }
    let q = data.q();
    let n = data.n();
    Ok(ObservedPart {
        y: data.y(),
        x: data.x(),
        z: area_indicator(&data.sample_sizes()),
        g: DMatrix::identity(q, q) * psi,
        r: DMatrix::identity(n, n),
    })
}

/// Stacks the unsampled units area by area; fully sampled areas contribute no rows.
pub fn build_unit_level_predictive(data: &NermData) -> Result<PredictivePart> {
    let mut blocks = Vec::with_capacity(data.q());
    for a in data.areas() {
        match &a.unsampled {
            UnsampledCovariates::Units(xt) => blocks.push(xt),
            UnsampledCovariates::AreaMean(_) => {
                return Err(LmmError::InvalidData(
                    "unit-level predictive model needs unsampled unit covariates".into(),
                ))
            }
        }
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
    let m: usize = sizes.iter().sum();
    let mut xt = DMatrix::zeros(m, data.p_omega());
    let mut row = 0;
    for b in blocks {
        xt.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    Ok(PredictivePart {
        xt,
        zt: area_indicator(&sizes),
        rt: DMatrix::identity(m, m),
    })
}

/// One row per area: `xbar_{i(u)}`, `Zt = I_q`, `Rt = diag(1 / r_i)`.
pub fn build_area_level_predictive(data: &NermData) -> Result<PredictivePart> {
    let q = data.q();
    let mut xt = DMatrix::zeros(q, data.p_omega());
    let mut rt = DMatrix::zeros(q, q);
    for (i, a) in data.areas().iter().enumerate() {
        xt.set_row(i, &a.unsampled_mean()?.transpose());
        rt[(i, i)] = 1.0 / a.n_unsampled() as f64;
    }
    Ok(PredictivePart {
        xt,
        zt: DMatrix::identity(q, q),
        rt,
    })
}

/// Full observed and predictive design for selection under the given mode.
pub fn nerm_design(data: &NermData, psi: f64, mode: PredictiveMode) -> Result<(DVector<f64>, DesignSet)> {
    let obs = build_observed(data, psi)?;
    let pred = match mode {
        PredictiveMode::Unit => build_unit_level_predictive(data)?,
        PredictiveMode::Area => build_area_level_predictive(data)?,
    };
    let design = DesignSet::new(obs.x, obs.z, pred.xt, pred.zt, obs.g, obs.r, pred.rt)?;
    Ok((obs.y, design))
}

/// Observed design reused as its own predictive design.
pub fn nerm_design_no_shift(data: &NermData, psi: f64) -> Result<(DVector<f64>, DesignSet)> {
    let obs = build_observed(data, psi)?;
    let design = DesignSet::no_shift(obs.x, obs.z, obs.g, obs.r)?;
    Ok((obs.y, design))
}
