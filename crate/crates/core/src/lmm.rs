//! Linear mixed model family with an observed and a predictive design.
//!
//! The observed model is `y = X(j) beta + Z b + eps` with `b ~ N(0, s2 G)` and
//! `eps ~ N(0, s2 R)`; the predictive model shares `beta` and `b` but uses its
//! own covariates `Xt`, `Zt` and error scale `Rt`. [`Lmm`] bundles a validated
//! [`DesignSet`] with its [`CovarianceAssembly`] and caches every
//! candidate-independent product, so per-candidate work is limited to
//! `p_j`-sized normal equations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{LmmError, Result};
use crate::linalg::{
    min_eigenvalue, psd_sqrt, require_full_column_rank,
    select_entries, spectral_norm_sym, submatrix, symmetrize, SpdFactor,
};

/// A candidate model: a nonempty, sorted, duplicate-free subset of the
/// full covariate set (0-based column indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateModel {
    indices: Vec<usize>,
}

impl CandidateModel {
    pub fn new(indices: impl IntoIterator<Item = usize>, p_omega: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(LmmError::InvalidCandidate("empty index set".into()));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(LmmError::InvalidCandidate(format!(
                "duplicate column index in {indices:?}"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= p_omega {
                return Err(LmmError::InvalidCandidate(format!(
                    "column index {last} out of range for {p_omega} covariates"
                )));
            }
        }
        Ok(CandidateModel { indices })
    }

    /// The full model containing every covariate.
    pub fn full(p_omega: usize) -> Self {
        CandidateModel {
            indices: (0..p_omega).collect(),
        }
    }

    /// The nested model made of the first `alpha` covariates.
    pub fn leading(alpha: usize, p_omega: usize) -> Result<Self> {
        Self::new(0..alpha, p_omega)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, column: usize) -> bool {
        self.indices.binary_search(&column).is_ok()
    }

    pub fn is_full(&self, p_omega: usize) -> bool {
        self.indices.len() == p_omega && self.indices.iter().enumerate().all(|(i, &c)| i == c)
    }

    pub fn is_subset_of(&self, other: &CandidateModel) -> bool {
        self.indices.iter().all(|&c| other.contains(c))
    }

    /// True when every nonzero coefficient of `beta` is indexed by this model.
    pub fn covers_support(&self, beta: &DVector<f64>) -> bool {
        beta.iter()
            .enumerate()
            .all(|(i, &b)| b == 0.0 || self.contains(i))
    }
}

impl fmt::Display for CandidateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Observed and predictive design matrices for the full covariate set.
#[derive(Debug, Clone)]
pub struct DesignSet {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    xt: DMatrix<f64>,
    zt: DMatrix<f64>,
    g: DMatrix<f64>,
    r: DMatrix<f64>,
    rt: DMatrix<f64>,
}

impl DesignSet {
    /// Validates dimensions, rank of `X`, symmetry and definiteness.
    ///
    /// `G` may be singular (a zero variance ratio is a valid plug-in), `R`
    /// and `Rt` must be positive definite.
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        xt: DMatrix<f64>,
        zt: DMatrix<f64>,
        g: DMatrix<f64>,
        r: DMatrix<f64>,
        rt: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        let q = z.ncols();
        let m = xt.nrows();
        if m == 0 {
            return Err(LmmError::Dimension("predictive design has no rows".into()));
        }
        if p == 0 {
            return Err(LmmError::Dimension("design has no covariates".into()));
        }
        let expect = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(LmmError::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        expect("Z", z.shape(), (n, q))?;
        expect("Xt", xt.shape(), (m, p))?;
        expect("Zt", zt.shape(), (m, q))?;
        expect("G", g.shape(), (q, q))?;
        expect("R", r.shape(), (n, n))?;
        expect("Rt", rt.shape(), (m, m))?;
        if [&x, &z, &xt, &zt, &g, &r, &rt]
            .iter()
            .any(|a| a.iter().any(|v| !v.is_finite()))
        {
            return Err(LmmError::Dimension("design contains non-finite entries".into()));
        }
        require_full_column_rank(&x, "X(omega)")?;
        psd_sqrt(&g, "G")?;
        SpdFactor::new(&r, "R")?;
        SpdFactor::new(&rt, "Rt")?;
        Ok(DesignSet {
            x,
            z,
            xt,
            zt,
            g,
            r,
            rt,
        })
    }

    /// Predictive design equal to the observed one (no covariate shift).
    pub fn no_shift(x: DMatrix<f64>, z: DMatrix<f64>, g: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let (xt, zt, rt) = (x.clone(), z.clone(), r.clone());
        Self::new(x, z, xt, zt, g, r, rt)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn xt(&self) -> &DMatrix<f64> {
        &self.xt
    }
    pub fn zt(&self) -> &DMatrix<f64> {
        &self.zt
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn rt(&self) -> &DMatrix<f64> {
        &self.rt
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn m(&self) -> usize {
        self.xt.nrows()
    }
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn p_omega(&self) -> usize {
        self.x.ncols()
    }
}

/// Marginal covariance scales `Sigma = Z G Z^T + R` and `Sigma_t = Zt G Zt^T + Rt`
/// with reusable factorizations.
#[derive(Debug, Clone)]
pub struct CovarianceAssembly {
    sigma: DMatrix<f64>,
    sigma_t: DMatrix<f64>,
    sigma_factor: SpdFactor,
    r_factor: SpdFactor,
    rt_factor: SpdFactor,
}

impl CovarianceAssembly {
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn sigma_t(&self) -> &DMatrix<f64> {
        &self.sigma_t
    }
    pub fn sigma_factor(&self) -> &SpdFactor {
        &self.sigma_factor
    }
    pub fn r_factor(&self) -> &SpdFactor {
        &self.r_factor
    }
    pub fn rt_factor(&self) -> &SpdFactor {
        &self.rt_factor
    }
    pub fn log_det_rt(&self) -> f64 {
        self.rt_factor.log_det()
    }
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.sigma_factor.solve_vec(v)
    }
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.sigma_factor.solve_mat(m)
    }
}

/// Builds `Sigma`, `Sigma_t` and factors `Sigma`, `R`, `Rt`.
///
/// `Sigma_t` is positive definite whenever `G` is semidefinite and `Rt` is
/// definite, both of which [`DesignSet::new`] has already verified.
pub fn assemble_covariance(design: &DesignSet) -> Result<CovarianceAssembly> {
    let zg = &design.z * &design.g;
    let sigma = symmetrize(&(&zg * design.z.transpose() + &design.r));
    let ztg = &design.zt * &design.g;
    let sigma_t = symmetrize(&(&ztg * design.zt.transpose() + &design.rt));
    let sigma_factor = SpdFactor::new(&sigma, "Sigma")?;
    let r_factor = SpdFactor::new(&design.r, "R")?;
    let rt_factor = SpdFactor::new(&design.rt, "Rt")?;
    Ok(CovarianceAssembly {
        sigma,
        sigma_t,
        sigma_factor,
        r_factor,
        rt_factor,
    })
}

/// True regression coefficients and variance scale used by simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub beta_star: DVector<f64>,
    pub sigma2_star: f64,
}

impl TruthParams {
    pub fn new(beta_star: DVector<f64>, sigma2_star: f64) -> Result<Self> {
        if !(sigma2_star > 0.0) {
            return Err(LmmError::InvalidConfig("sigma2_star must be positive".into()));
        }
        Ok(TruthParams {
            beta_star,
            sigma2_star,
        })
    }

    pub fn as_params(&self) -> ModelParams {
        ModelParams {
            beta: self.beta_star.clone(),
            sigma2: self.sigma2_star,
        }
    }
}

/// A point `(beta, sigma2)` of the full-model parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

/// GLS / ML fit of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFit {
    pub candidate: CandidateModel,
    pub beta_hat: DVector<f64>,
    /// ML variance scale (divisor `n`).
    pub sigma2_hat: f64,
    /// Empirical Bayes predictor `G Z^T Sigma^{-1} (y - X(j) beta_hat)`.
    pub b_hat: DVector<f64>,
}

/// Projection matrices of one candidate.
#[derive(Debug, Clone)]
pub struct Projections {
    pub p_j: DMatrix<f64>,
    pub p_omega: DMatrix<f64>,
    pub pt_j: DMatrix<f64>,
}

/// Per-candidate normal-equation data, reused across responses.
#[derive(Debug, Clone)]
pub struct CandidateSolve {
    candidate: CandidateModel,
    /// `(X(j)^T Sigma^{-1} X(j))^{-1}`.
    v: DMatrix<f64>,
    x: DMatrix<f64>,
    sinv_x: DMatrix<f64>,
}

impl CandidateSolve {
    pub fn candidate(&self) -> &CandidateModel {
        &self.candidate
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
}

/// A response vector with its `Sigma^{-1}`-weighted summaries.
#[derive(Debug, Clone)]
pub struct Response {
    y: DVector<f64>,
    sinv_y: DVector<f64>,
    /// `X(omega)^T Sigma^{-1} y`.
    score: DVector<f64>,
    y_sinv_y: f64,
}

impl Response {
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
}

/// Result of solving the GLS normal equations for one candidate.
#[derive(Debug, Clone)]
pub struct GlsSolution {
    pub beta: DVector<f64>,
    /// `(y - X beta)^T Sigma^{-1} (y - X beta)`.
    pub rss: f64,
    /// `Sigma^{-1} (y - X beta)`.
    pub sinv_resid: DVector<f64>,
}

/// A design together with its covariance factorization and cached products.
#[derive(Debug, Clone)]
pub struct Lmm {
    design: DesignSet,
    cov: CovarianceAssembly,
    sinv_x: DMatrix<f64>,
    info: DMatrix<f64>,
    info_inv: DMatrix<f64>,
    full_hat: DMatrix<f64>,
    shifted: DMatrix<f64>,
    shift_gram: DMatrix<f64>,
    cond_cov_b: DMatrix<f64>,
    trace_rt_inv_lambda: f64,
    trace_r_sinv: f64,
    r_cross: DMatrix<f64>,
    g_sqrt: DMatrix<f64>,
}

/// Relative threshold below which a residual sum of squares counts as zero.
const DEGENERATE_RSS: f64 = 1e-20;

impl Lmm {
    pub fn new(design: DesignSet) -> Result<Self> {
        let cov = assemble_covariance(&design)?;
        let sinv_x = cov.solve_mat(&design.x);
        let info = symmetrize(&(design.x.transpose() * &sinv_x));
        let info_inv = SpdFactor::new(&info, "X^T Sigma^-1 X")?.inverse();
        let full_hat = &info_inv * sinv_x.transpose();

        let zg = &design.z * &design.g;
        let gzt_sinv = cov.solve_mat(&zg).transpose();
        let zt_sinv_x = design.z.transpose() * &sinv_x;
        let shifted = &design.xt - &design.zt * (&design.g * &zt_sinv_x);
        let shift_gram = cov.rt_factor.quad_form(&shifted);

        let cond_cov_b = symmetrize(&(&design.g - &gzt_sinv * &zg));
        if cond_cov_b.nrows() > 0 {
            let floor = -1e-8 * spectral_norm_sym(&cond_cov_b).max(f64::MIN_POSITIVE);
            let min = min_eigenvalue(&cond_cov_b);
            if min < floor {
                return Err(LmmError::NotPositiveDefinite {
                    what: "Lambda",
                    min_eigenvalue: min,
                });
            }
        }
        let zt_rinv_zt = cov.rt_factor.quad_form(&design.zt);
        let trace_rt_inv_lambda = design.m() as f64 + (zt_rinv_zt * &cond_cov_b).trace();
        let trace_r_sinv = cov.sigma_factor.trace_solve(&design.r);
        let r_cross = symmetrize(&(sinv_x.transpose() * &design.r * &sinv_x));
        let g_sqrt = psd_sqrt(&design.g, "G")?;

        Ok(Lmm {
            design,
            cov,
            sinv_x,
            info,
            info_inv,
            full_hat,
            shifted,
            shift_gram,
            cond_cov_b,
            trace_rt_inv_lambda,
            trace_r_sinv,
            r_cross,
            g_sqrt,
        })
    }

    pub fn design(&self) -> &DesignSet {
        &self.design
    }
    pub fn covariance(&self) -> &CovarianceAssembly {
        &self.cov
    }
    pub fn n(&self) -> usize {
        self.design.n()
    }
    pub fn m(&self) -> usize {
        self.design.m()
    }
    pub fn p_omega(&self) -> usize {
        self.design.p_omega()
    }
    /// `X(omega)^T Sigma^{-1} X(omega)`.
    pub fn info(&self) -> &DMatrix<f64> {
        &self.info
    }
    /// `(X(omega)^T Sigma^{-1} X(omega))^{-1}`.
    pub fn info_inverse(&self) -> &DMatrix<f64> {
        &self.info_inv
    }
    /// `Xt(omega) - Zt G Z^T Sigma^{-1} X(omega)`; the columns of `A` and the
    /// range of `B` for every candidate live here.
    pub fn shifted_design(&self) -> &DMatrix<f64> {
        &self.shifted
    }
    /// Gram matrix of the shifted design under `Rt^{-1}`.
    pub fn shift_gram(&self) -> &DMatrix<f64> {
        &self.shift_gram
    }
    /// `tr(Rt^{-1} Lambda)`.
    pub fn trace_rt_inv_lambda(&self) -> f64 {
        self.trace_rt_inv_lambda
    }
    /// `tr(R Sigma^{-1})`.
    pub fn trace_r_sinv(&self) -> f64 {
        self.trace_r_sinv
    }
    /// `(Sigma^{-1} X)^T R (Sigma^{-1} X)`, so that `tr(R P_j)` is a `p_j`-sized trace.
    pub fn r_cross(&self) -> &DMatrix<f64> {
        &self.r_cross
    }
    pub fn log_det_rt(&self) -> f64 {
        self.cov.log_det_rt()
    }

    /// Conditional covariance scale of the predictive target given `y`:
    /// `Lambda = Sigma_t - Zt G Z^T Sigma^{-1} Z G Zt^T`.
    pub fn lambda(&self) -> DMatrix<f64> {
        let zt = &self.design.zt;
        symmetrize(&(zt * &self.cond_cov_b * zt.transpose() + &self.design.rt))
    }

    pub fn solve_candidate(&self, candidate: &CandidateModel) -> Result<CandidateSolve> {
        let p = self.p_omega();
        if candidate.indices().last().is_some_and(|&c| c >= p) {
            return Err(LmmError::InvalidCandidate(format!(
                "candidate {candidate} exceeds {p} covariates"
            )));
        }
        let idx = candidate.indices();
        let x = self.design.x.select_columns(idx);
        require_full_column_rank(&x, format!("X(j) for candidate {candidate}"))?;
        let info_j = submatrix(&self.info, idx, idx);
        let v = SpdFactor::new(&info_j, "X(j)^T Sigma^-1 X(j)")?.inverse();
        Ok(CandidateSolve {
            candidate: candidate.clone(),
            v,
            x,
            sinv_x: self.sinv_x.select_columns(idx),
        })
    }

    pub fn response(&self, y: &DVector<f64>) -> Result<Response> {
        if y.len() != self.n() {
            return Err(LmmError::Dimension(format!(
                "response has length {}, expected {}",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LmmError::Dimension("response contains non-finite values".into()));
        }
        let sinv_y = self.cov.solve(y);
        let score = self.sinv_x.transpose() * y;
        let y_sinv_y = y.dot(&sinv_y);
        Ok(Response {
            y: y.clone(),
            sinv_y,
            score,
            y_sinv_y,
        })
    }

    /// Solves the GLS normal equations of a prepared candidate.
    pub fn solve_gls(&self, sol: &CandidateSolve, resp: &Response) -> Result<GlsSolution> {
        let idx = sol.candidate.indices();
        let beta = &sol.v * select_entries(&resp.score, idx);
        let sinv_resid = &resp.sinv_y - &sol.sinv_x * &beta;
        let resid = &resp.y - &sol.x * &beta;
        let rss = resid.dot(&sinv_resid);
        if !rss.is_finite() || rss <= DEGENERATE_RSS * resp.y_sinv_y {
            return Err(LmmError::DegenerateFit);
        }
        Ok(GlsSolution {
            beta,
            rss,
            sinv_resid,
        })
    }

    /// ML fit with the empirical Bayes random-effect predictor.
    pub fn fit_prepared(&self, sol: &CandidateSolve, resp: &Response) -> Result<ObservedFit> {
        let gls = self.solve_gls(sol, resp)?;
        Ok(ObservedFit {
            candidate: sol.candidate.clone(),
            sigma2_hat: gls.rss / self.n() as f64,
            b_hat: &self.design.g * (self.design.z.transpose() * &gls.sinv_resid),
            beta_hat: gls.beta,
        })
    }

    pub fn gls_fit(&self, y: &DVector<f64>, candidate: &CandidateModel) -> Result<ObservedFit> {
        let sol = self.solve_candidate(candidate)?;
        if self.n() <= sol.candidate.size() {
            return Err(LmmError::InsufficientDegreesOfFreedom(format!(
                "n = {} must exceed p_j = {}",
                self.n(),
                sol.candidate.size()
            )));
        }
        let resp = self.response(y)?;
        self.fit_prepared(&sol, &resp)
    }

    /// Full-model estimates with the unbiased variance divisor `n - p_omega`.
    pub fn full_model_unbiased(&self, y: &DVector<f64>) -> Result<ModelParams> {
        let fit = self.gls_fit(y, &CandidateModel::full(self.p_omega()))?;
        Ok(self.unbiased_from_full_fit(&fit))
    }

    pub fn unbiased_from_full_fit(&self, full: &ObservedFit) -> ModelParams {
        let n = self.n() as f64;
        ModelParams {
            beta: full.beta_hat.clone(),
            sigma2: n * full.sigma2_hat / (n - self.p_omega() as f64),
        }
    }

    /// Refit of the full model used inside bootstrap loops; returns
    /// `(beta_tilde, rss)` through the cached hat operator.
    pub fn full_refit(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let beta = &self.full_hat * y;
        let resid = y - &self.design.x * &beta;
        let rss = resid.dot(&self.cov.solve(&resid));
        (beta, rss)
    }

    pub fn projections(&self, candidate: &CandidateModel) -> Result<Projections> {
        let sol = self.solve_candidate(candidate)?;
        let full = self.solve_candidate(&CandidateModel::full(self.p_omega()))?;
        let p_j = symmetrize(&(&sol.sinv_x * &sol.v * sol.sinv_x.transpose()));
        let p_omega = symmetrize(&(&full.sinv_x * &full.v * full.sinv_x.transpose()));
        let xt_j = self.design.xt.select_columns(candidate.indices());
        let pt_j = xt_j * &sol.v * sol.sinv_x.transpose();
        Ok(Projections { p_j, p_omega, pt_j })
    }

    /// Draws `y ~ N(X(omega) beta, sigma2 Sigma)`.
    pub fn simulate_response<R: Rng + ?Sized>(&self, truth: &TruthParams, rng: &mut R) -> DVector<f64> {
        let xi = standard_normal_vec(self.n(), rng);
        &self.design.x * &truth.beta_star + self.cov.sigma_factor.mul_lower(&xi) * truth.sigma2_star.sqrt()
    }

    /// Draws `Z b + eps` with `b ~ N(0, sigma2 G)` and `eps ~ N(0, sigma2 E)`,
    /// where `E` is `R` when `use_r` is set and the identity otherwise.
    pub fn simulate_noise<R: Rng + ?Sized>(&self, sigma2: f64, use_r: bool, rng: &mut R) -> DVector<f64> {
        let s = sigma2.sqrt();
        let xi_b = standard_normal_vec(self.design.q(), rng);
        let xi_e = standard_normal_vec(self.n(), rng);
        let b = &self.g_sqrt * xi_b;
        let eps = if use_r {
            self.cov.r_factor.mul_lower(&xi_e)
        } else {
            xi_e
        };
        (&self.design.z * b + eps) * s
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nerm_z(sizes: &[usize]) -> DMatrix<f64> {
        let n: usize = sizes.iter().sum();
        let mut z = DMatrix::zeros(n, sizes.len());
        let mut row = 0;
        for (i, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                z[(row, i)] = 1.0;
                row += 1;
            }
        }
        z
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = random_matrix(k, k, rng);
        symmetrize(&(&a * a.transpose() + DMatrix::identity(k, k) * k as f64))
    }

    fn ones_x(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn candidate_validation() {
        assert!(CandidateModel::new(vec![], 3).is_err());
        assert!(CandidateModel::new(vec![1, 1], 3).is_err());
        assert!(CandidateModel::new(vec![3], 3).is_err());
        let c = CandidateModel::new(vec![2, 0], 3).unwrap();
        assert_eq!(c.indices(), &[0, 2]);
        assert_eq!(c.to_string(), "{0,2}");
        assert!(CandidateModel::full(3).is_full(3));
        assert!(!c.is_full(3));
        assert!(c.is_subset_of(&CandidateModel::full(3)));
    }

    #[test]
    fn zero_random_effects_give_sigma_equal_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let r = random_spd(n, &mut rng);
        let x = random_matrix(n, 2, &mut rng);
        let d = DesignSet::no_shift(x, DMatrix::zeros(n, 2), DMatrix::identity(2, 2), r.clone()).unwrap();
        let cov = assemble_covariance(&d).unwrap();
        assert_relative_eq!(cov.sigma(), &r, epsilon = 1e-14);
    }

    #[test]
    fn nerm_sigma_is_block_diagonal() {
        let z = nerm_z(&[2, 3]);
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64 + 1.0);
        let d = DesignSet::no_shift(x, z, DMatrix::identity(2, 2), DMatrix::identity(5, 5)).unwrap();
        let cov = assemble_covariance(&d).unwrap();
        let s = cov.sigma();
        for i in 0..5 {
            for j in 0..5 {
                let same = (i < 2) == (j < 2);
                let expected = if i == j { 2.0 } else if same { 1.0 } else { 0.0 };
                assert_eq!(s[(i, j)], expected);
            }
        }
    }

    #[test]
    fn sigma_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, q) = (5, 2);
        let g = random_spd(q, &mut rng);
        let r = random_spd(n, &mut rng);
        let z = random_matrix(n, q, &mut rng);
        let x = random_matrix(n, 2, &mut rng);
        let d = DesignSet::no_shift(x, z.clone(), g.clone(), r.clone()).unwrap();
        let cov = assemble_covariance(&d).unwrap();
        let dense = &z * &g * z.transpose() + &r;
        assert_relative_eq!(cov.sigma(), &dense, epsilon = 1e-12);
        let inv = cov.sigma_factor().inverse();
        let resid = &inv * cov.sigma() - DMatrix::<f64>::identity(n, n);
        assert!(crate::linalg::spectral_norm(&resid) < 1e-8);
    }

    #[test]
    fn ols_intercept_gives_mean_and_population_variance() {
        let y = DVector::from_vec(vec![1.0, 4.0, 2.0, 7.0, 5.0]);
        let n = y.len();
        let d = DesignSet::no_shift(ones_x(n), DMatrix::zeros(n, 1), DMatrix::identity(1, 1), DMatrix::identity(n, n)).unwrap();
        let lmm = Lmm::new(d).unwrap();
        let fit = lmm.gls_fit(&y, &CandidateModel::full(1)).unwrap();
        let mean = y.mean();
        let pop_var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert_relative_eq!(fit.beta_hat[0], mean, epsilon = 1e-12);
        assert_relative_eq!(fit.sigma2_hat, pop_var, epsilon = 1e-12);
    }

    #[test]
    fn exact_fit_is_degenerate() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = &x * DVector::from_vec(vec![0.5, 2.0]);
        let d = DesignSet::no_shift(x, DMatrix::zeros(4, 1), DMatrix::identity(1, 1), DMatrix::identity(4, 4)).unwrap();
        let lmm = Lmm::new(d).unwrap();
        assert_eq!(lmm.gls_fit(&y, &CandidateModel::full(2)), Err(LmmError::DegenerateFit));
    }

    #[test]
    fn gls_matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = nerm_z(&[3, 3]);
        let x = random_matrix(6, 2, &mut rng);
        let y = random_matrix(6, 1, &mut rng).column(0).into_owned();
        let d = DesignSet::no_shift(x.clone(), z.clone(), DMatrix::identity(2, 2), DMatrix::identity(6, 6)).unwrap();
        let lmm = Lmm::new(d).unwrap();
        let j = CandidateModel::new(vec![1], 2).unwrap();
        let fit = lmm.gls_fit(&y, &j).unwrap();

        let sigma = &z * z.transpose() + DMatrix::<f64>::identity(6, 6);
        let sinv = sigma.try_inverse().unwrap();
        let xj = x.columns(1, 1).into_owned();
        let beta = (xj.transpose() * &sinv * &xj).try_inverse().unwrap() * xj.transpose() * &sinv * &y;
        let e = &y - &xj * &beta;
        let s2 = (e.transpose() * &sinv * &e)[(0, 0)] / 6.0;
        let b = z.transpose() * &sinv * &e;
        assert_relative_eq!(fit.beta_hat, beta, epsilon = 1e-10);
        assert_relative_eq!(fit.sigma2_hat, s2, epsilon = 1e-10);
        assert_relative_eq!(fit.b_hat, b, epsilon = 1e-10);
    }

    #[test]
    fn full_model_unbiased_rescales_divisor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10;
        let x = random_matrix(n, 3, &mut rng);
        let y = random_matrix(n, 1, &mut rng).column(0).into_owned();
        let d = DesignSet::no_shift(x, DMatrix::zeros(n, 1), DMatrix::identity(1, 1), DMatrix::identity(n, n)).unwrap();
        let lmm = Lmm::new(d).unwrap();
        let full = lmm.gls_fit(&y, &CandidateModel::full(3)).unwrap();
        let eta = lmm.full_model_unbiased(&y).unwrap();
        assert_eq!(eta.beta, full.beta_hat);
        assert_relative_eq!(eta.sigma2, 10.0 * full.sigma2_hat / 7.0, epsilon = 1e-14);
        let fake = ObservedFit {
            sigma2_hat: 0.7,
            ..full
        };
        assert_relative_eq!(lmm.unbiased_from_full_fit(&fake).sigma2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn projections_match_dense_textbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, q, m) = (5, 2, 3);
        let x = random_matrix(n, 2, &mut rng);
        let z = random_matrix(n, q, &mut rng);
        let xt = random_matrix(m, 2, &mut rng);
        let zt = random_matrix(m, q, &mut rng);
        let g = random_spd(q, &mut rng);
        let r = random_spd(n, &mut rng);
        let rt = random_spd(m, &mut rng);
        let d = DesignSet::new(x.clone(), z.clone(), xt.clone(), zt, g.clone(), r.clone(), rt).unwrap();
        let lmm = Lmm::new(d).unwrap();
        let j = CandidateModel::new(vec![0], 2).unwrap();
        let proj = lmm.projections(&j).unwrap();

        let sinv = (&z * &g * z.transpose() + &r).try_inverse().unwrap();
        let xj = x.columns(0, 1).into_owned();
        let vj = (xj.transpose() * &sinv * &xj).try_inverse().unwrap();
        let pj = &sinv * &xj * &vj * xj.transpose() * &sinv;
        let vw = (x.transpose() * &sinv * &x).try_inverse().unwrap();
        let pw = &sinv * &x * vw * x.transpose() * &sinv;
        let ptj = xt.columns(0, 1) * &vj * xj.transpose() * &sinv;
        assert_relative_eq!(proj.p_j, pj, epsilon = 1e-10);
        assert_relative_eq!(proj.p_omega, pw, epsilon = 1e-10);
        assert_relative_eq!(proj.pt_j, ptj, epsilon = 1e-10);

        let sigma = lmm.covariance().sigma();
        let sp = sigma * &proj.p_j;
        assert_relative_eq!(&sp * &sp, sp.clone(), epsilon = 1e-8);
        assert_relative_eq!(sp.trace(), 1.0, epsilon = 1e-6);

        let full = lmm.projections(&CandidateModel::full(2)).unwrap();
        assert_relative_eq!(&full.p_omega - &full.p_j, DMatrix::zeros(n, n), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_candidate_rejected() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let mut xx = DMatrix::zeros(4, 3);
        xx.columns_mut(0, 2).copy_from(&x);
        xx.set_column(2, &x.column(0));
        let res = DesignSet::no_shift(xx, DMatrix::zeros(4, 1), DMatrix::identity(1, 1), DMatrix::identity(4, 4));
        assert!(matches!(res, Err(LmmError::RankDeficient { .. })));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = ones_x(4);
        let res = DesignSet::new(
            x.clone(),
            DMatrix::zeros(4, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(4, 4),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(res, Err(LmmError::Dimension(_))));
        let empty = DesignSet::new(
            x,
            DMatrix::zeros(4, 1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(4, 4),
            DMatrix::zeros(0, 0),
        );
        assert!(empty.is_err());
    }
}
