//! Conditional Akaike information for linear mixed models under covariate
//! shift.
//!
//! The crate is organised bottom-up:
//!
//! * [`lmm`]: observed/predictive designs, covariance assembly, GLS fits;
//! * [`criteria`]: the conditional Akaike information, its Monte Carlo
//!   value under a known truth, and the estimators `U`, `HAT` and `DAGGER`;
//! * [`smallarea`]: nested error regression designs, variance-ratio
//!   estimation and finite-population-mean prediction;
//! * [`simlab`]: the estimator-bias and design-based simulation studies.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod error;
pub mod linalg;
pub mod lmm;
pub mod rng;
pub mod simlab;
pub mod smallarea;

pub use criteria::{BootstrapConfig, CriterionBreakdown, ShiftGeometry, Variant};
pub use error::{LmmError, Result};
pub use lmm::{CandidateModel, DesignSet, Lmm, ModelParams, ObservedFit, TruthParams};
