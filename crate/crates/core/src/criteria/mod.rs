//! Conditional Akaike information under covariate shift and its estimators.
//!
//! Three variants are provided: the exact-under-overspecification criterion
//! ([`Variant::U`]), the second-order corrected criterion ([`Variant::Hat`])
//! and its bootstrap-refined version ([`Variant::Dagger`]).

mod bootstrap;
mod geometry;
mod oracle;
mod terms;

pub use bootstrap::{
    bootstrap_draws, bootstrap_r3_r4, BootstrapConfig, BootstrapDraws, ErrorScale, MIN_RECOMMENDED_REPLICATIONS,
};
pub use geometry::{shift_geometry, ShiftGeometry};
pub use oracle::{cai_draw, mc_true_cai, mc_true_cai_many, McEstimate, MIN_ORACLE_ITERATIONS};
pub use terms::{
    b1_correction, lambda_hats, lambda_hats_from_variances, r1_hat, r2_hat, r3_r4_at, r3_r4_plugin, r_star,
    true_r_terms, LambdaHats, PluginTerms, R34Eval, TrueRTerms,
};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{LmmError, Result};
use crate::lmm::{CandidateModel, Lmm, ModelParams, ObservedFit, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    U,
    Hat,
    Dagger,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::U, Variant::Hat, Variant::Dagger];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::U => "u",
            Variant::Hat => "hat",
            Variant::Dagger => "dagger",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = LmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Ok(Variant::U),
            "hat" => Ok(Variant::Hat),
            "dagger" => Ok(Variant::Dagger),
            other => Err(LmmError::InvalidConfig(format!(
                "unknown variant '{other}' (expected u, hat or dagger)"
            ))),
        }
    }
}

/// Per-candidate decomposition of a criterion value.
///
/// Slots that a variant does not use are zero: `delta_cs` outside
/// [`Variant::U`], and `r_star`, `r1`..`r4` inside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionBreakdown {
    pub variant: Variant,
    pub candidate: CandidateModel,
    pub p_j: usize,
    pub sigma2_hat: f64,
    pub goodness: f64,
    pub r_star: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub delta_cs: f64,
    pub total: f64,
}

impl CriterionBreakdown {
    /// Sum of the parts in the order the total is built.
    pub fn recompose(&self) -> f64 {
        match self.variant {
            Variant::U => self.goodness + self.delta_cs,
            Variant::Hat | Variant::Dagger => self.goodness + self.r_star + self.r1 + self.r2 + self.r3 + self.r4,
        }
    }
}

/// Data-dependent state shared by all candidates for one response: the
/// full-model fit, its unbiased parameter estimate and, for
/// [`Variant::Dagger`], the bootstrap refits.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    lmm: &'a Lmm,
    resp: Response,
    full_fit: ObservedFit,
    eta: ModelParams,
    draws: Option<BootstrapDraws>,
}

impl<'a> Evaluator<'a> {
    pub fn new(lmm: &'a Lmm, y: &DVector<f64>) -> Result<Self> {
        let p = lmm.p_omega();
        if lmm.n() <= p {
            return Err(LmmError::InsufficientDegreesOfFreedom(format!(
                "n = {} must exceed p_omega = {p}",
                lmm.n()
            )));
        }
        let resp = lmm.response(y)?;
        let full = lmm.solve_candidate(&CandidateModel::full(p))?;
        let full_fit = lmm.fit_prepared(&full, &resp)?;
        let eta = lmm.unbiased_from_full_fit(&full_fit);
        Ok(Evaluator {
            lmm,
            resp,
            full_fit,
            eta,
            draws: None,
        })
    }

    /// Draws the bootstrap refits needed by [`Variant::Dagger`].
    pub fn with_bootstrap(mut self, cfg: &BootstrapConfig) -> Result<Self> {
        self.draws = Some(bootstrap_draws(self.lmm, &self.eta, cfg)?);
        Ok(self)
    }

    pub fn eta(&self) -> &ModelParams {
        &self.eta
    }

    pub fn full_fit(&self) -> &ObservedFit {
        &self.full_fit
    }

    pub fn draws(&self) -> Option<&BootstrapDraws> {
        self.draws.as_ref()
    }

    pub fn fit(&self, geom: &ShiftGeometry) -> Result<ObservedFit> {
        self.lmm.fit_prepared(geom.solve(), &self.resp)
    }

    pub fn evaluate(&self, geom: &ShiftGeometry, variant: Variant) -> Result<CriterionBreakdown> {
        let fit = self.fit(geom)?;
        self.evaluate_fit(geom, &fit, variant)
    }

    /// Evaluates a criterion from a fit previously obtained with [`Self::fit`].
    pub fn evaluate_fit(&self, geom: &ShiftGeometry, fit: &ObservedFit, variant: Variant) -> Result<CriterionBreakdown> {
        let (n, p_j) = (geom.n, geom.p_j);
        let s = fit.sigma2_hat;
        let base = geom.m as f64 * (2.0 * PI * s).ln() + geom.log_det_rt;
        let mut out = CriterionBreakdown {
            variant,
            candidate: geom.candidate.clone(),
            p_j,
            sigma2_hat: s,
            goodness: base,
            r_star: 0.0,
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            r4: 0.0,
            delta_cs: 0.0,
            total: 0.0,
        };
        match variant {
            Variant::U => {
                if n <= p_j + 2 {
                    return Err(LmmError::InsufficientDegreesOfFreedom(format!(
                        "criterion needs n > p_j + 2 (n = {n}, p_j = {p_j})"
                    )));
                }
                let design = self.lmm.design();
                let x_j = design.x().select_columns(geom.candidate.indices());
                let resid = self.resp.y() - x_j * &fit.beta_hat - design.z() * &fit.b_hat;
                let r_resid = self.lmm.covariance().r_factor().solve_vec(&resid);
                out.goodness = base + resid.dot(&r_resid) / s;
                let (nf, pj) = (n as f64, p_j as f64);
                out.delta_cs = nf / (nf - pj - 2.0) * geom.gamma
                    + nf / (nf - pj) * (-self.lmm.trace_r_sinv() + geom.trace_r_pj);
            }
            Variant::Hat | Variant::Dagger => {
                out.r_star = r_star(geom.gamma, n, p_j)?;
                let lh = lambda_hats(fit, &self.full_fit, n, p_j, geom.p_omega)?;
                out.r1 = r1_hat(geom.gamma, &lh, n, p_j);
                out.r2 = r2_hat(geom.gamma, &lh, n, p_j);
                if variant == Variant::Hat {
                    let plug = r3_r4_plugin(geom, &self.eta);
                    out.r3 = plug.r3_tilde_tilde;
                    out.r4 = plug.r4_tilde;
                } else {
                    let draws = self.draws.as_ref().ok_or_else(|| {
                        LmmError::InvalidConfig("dagger variant requires a bootstrap configuration".into())
                    })?;
                    let (r3, r4) = bootstrap_r3_r4(geom, &self.eta, draws);
                    out.r3 = r3;
                    out.r4 = r4;
                }
            }
        }
        out.total = out.recompose();
        Ok(out)
    }
}

/// Evaluates one criterion for one candidate.
pub fn criterion(
    variant: Variant,
    y: &DVector<f64>,
    lmm: &Lmm,
    candidate: &CandidateModel,
    cfg: Option<&BootstrapConfig>,
) -> Result<CriterionBreakdown> {
    let geom = shift_geometry(lmm, candidate)?;
    let mut eval = Evaluator::new(lmm, y)?;
    if variant == Variant::Dagger {
        let cfg = cfg.ok_or_else(|| LmmError::InvalidConfig("dagger variant requires a bootstrap configuration".into()))?;
        eval = eval.with_bootstrap(cfg)?;
    }
    eval.evaluate(&geom, variant)
}

/// Ascending by total, then smaller `p_j`, then lexicographic indices.
pub fn compare_breakdowns(a: &CriterionBreakdown, b: &CriterionBreakdown) -> Ordering {
    a.total
        .total_cmp(&b.total)
        .then(a.p_j.cmp(&b.p_j))
        .then_with(|| a.candidate.indices().cmp(b.candidate.indices()))
}

/// Ranked criteria together with the candidates that could not be evaluated.
#[derive(Debug, Clone)]
pub struct Selection {
    pub ranked: Vec<CriterionBreakdown>,
    pub excluded: Vec<(CandidateModel, LmmError)>,
}

impl Selection {
    pub fn best(&self) -> Option<&CriterionBreakdown> {
        self.ranked.first()
    }

    pub fn from_results(results: Vec<(CandidateModel, Result<CriterionBreakdown>)>) -> Self {
        let mut ranked = Vec::new();
        let mut excluded = Vec::new();
        for (c, r) in results {
            match r {
                Ok(b) => ranked.push(b),
                Err(e) => excluded.push((c, e)),
            }
        }
        ranked.sort_by(compare_breakdowns);
        Selection { ranked, excluded }
    }
}

/// Evaluates every candidate and ranks them; candidates whose geometry or fit
/// fails are reported in [`Selection::excluded`].
pub fn select_best(
    y: &DVector<f64>,
    lmm: &Lmm,
    candidates: &[CandidateModel],
    variant: Variant,
    cfg: Option<&BootstrapConfig>,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(LmmError::InvalidCandidate("candidate list is empty".into()));
    }
    let mut eval = Evaluator::new(lmm, y)?;
    if variant == Variant::Dagger {
        let cfg = cfg.ok_or_else(|| LmmError::InvalidConfig("dagger variant requires a bootstrap configuration".into()))?;
        eval = eval.with_bootstrap(cfg)?;
    }
    let results: Vec<(CandidateModel, Result<CriterionBreakdown>)> = candidates
        .par_iter()
        .map(|c| {
            let r = shift_geometry(lmm, c).and_then(|g| eval.evaluate(&g, variant));
            (c.clone(), r)
        })
        .collect();
    Ok(Selection::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(indices: &[usize], total: f64) -> CriterionBreakdown {
        let candidate = CandidateModel::new(indices.iter().copied(), 5).unwrap();
        CriterionBreakdown {
            variant: Variant::Hat,
            p_j: candidate.size(),
            candidate,
            sigma2_hat: 1.0,
            goodness: total,
            r_star: 0.0,
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            r4: 0.0,
            delta_cs: 0.0,
            total,
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("HAT".parse::<Variant>().unwrap(), Variant::Hat);
        assert_eq!("dagger".parse::<Variant>().unwrap(), Variant::Dagger);
        assert_eq!("u".parse::<Variant>().unwrap(), Variant::U);
        assert!("aic".parse::<Variant>().is_err());
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn ties_prefer_smaller_then_lexicographic() {
        let sel = Selection::from_results(vec![
            (CandidateModel::full(3), Ok(stub(&[0, 1, 2], 10.0))),
            (CandidateModel::full(1), Ok(stub(&[1], 10.0))),
            (CandidateModel::full(1), Ok(stub(&[0], 10.0))),
            (CandidateModel::full(2), Ok(stub(&[0, 3], 9.0))),
        ]);
        let order: Vec<Vec<usize>> = sel.ranked.iter().map(|b| b.candidate.indices().to_vec()).collect();
        assert_eq!(order, vec![vec![0, 3], vec![0], vec![1], vec![0, 1, 2]]);
    }

    #[test]
    fn failures_are_reported_not_dropped() {
        let sel = Selection::from_results(vec![
            (CandidateModel::full(1), Ok(stub(&[0], 1.0))),
            (CandidateModel::full(2), Err(LmmError::DegenerateFit)),
        ]);
        assert_eq!(sel.ranked.len(), 1);
        assert_eq!(sel.excluded.len(), 1);
        assert_eq!(sel.best().unwrap().total, 1.0);
    }
}
