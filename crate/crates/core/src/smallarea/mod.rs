//! Nested error regression model (NERM) for small-area prediction.
//!
//! Maps per-area samples onto the generic [`crate::lmm`] designs with
//! `Z = diag(1_{n_i})`, `G = psi I_q` and `R = I_n`, estimates the variance
//! ratio `psi` by fitting of constants, and predicts finite-population means.

mod data;
mod design;
mod predict;
mod psi;

pub use data::{AreaRecord, NermData, PredictiveMode, UnsampledCovariates};
pub use design::{
    area_indicator, build_area_level_predictive, build_observed, build_unit_level_predictive, nerm_design,
    nerm_design_no_shift, ObservedPart, PredictivePart,
};
pub use predict::{
    conditional_moments, eblup_unsampled, ebp_log_scale, fit_candidate, predict_area_means, predict_finite_mean,
    AreaPredictions, ConditionalMoments, UnsampledPrediction,
};
pub use psi::{estimate_psi, estimate_psi_for, estimate_psi_moments, PsiEstimate};
