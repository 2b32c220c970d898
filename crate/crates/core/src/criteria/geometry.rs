use nalgebra::DMatrix;

use crate::error::{LmmError, Result};
use crate::linalg::{min_eigenvalue, spectral_norm_sym, submatrix, symmetrize};
use crate::lmm::{CandidateModel, CandidateSolve, Lmm};

/// Candidate-specific matrices describing how the predictive design departs
/// from what the candidate can reproduce.
///
/// With `At = Xt(omega) - Zt G Z^T Sigma^{-1} X(omega)` (cached on [`Lmm`]),
/// `A = At[:, j]` and `B = At (E_j V_j F[j, :] - I)`, where `F` is the
/// full-model information matrix and `V_j = F[j, j]^{-1}`. The quadratic form
/// `B^T Rt^{-1} B` therefore reduces to `p_omega`-sized algebra.
#[derive(Debug, Clone)]
pub struct ShiftGeometry {
    pub candidate: CandidateModel,
    pub n: usize,
    pub m: usize,
    pub p_j: usize,
    pub p_omega: usize,
    /// `Xt(j) - Zt G Z^T Sigma^{-1} X(j)`, m x p_j.
    pub a: DMatrix<f64>,
    /// `Pt_j X(omega) - Xt(omega) + Zt G Z^T (P_omega - P_j) X(omega)`, m x p_omega.
    pub b: DMatrix<f64>,
    /// `X(omega)^T (P_omega - P_j) X(omega)`.
    pub c: DMatrix<f64>,
    pub gamma: f64,
    /// `B^T Rt^{-1} B`.
    pub bt_rinv_b: DMatrix<f64>,
    /// `(X(omega)^T Sigma^{-1} X(omega))^{-1}`.
    pub info_inv: DMatrix<f64>,
    pub trace_rt_inv_lambda: f64,
    pub log_det_rt: f64,
    /// `tr(R P_j)`.
    pub trace_r_pj: f64,
    pub(crate) trace_c_info_inv: f64,
    pub(crate) trace_m_info_inv: f64,
    pub(crate) solve: CandidateSolve,
}

impl ShiftGeometry {
    pub fn solve(&self) -> &CandidateSolve {
        &self.solve
    }
}

pub fn shift_geometry(lmm: &Lmm, candidate: &CandidateModel) -> Result<ShiftGeometry> {
    let solve = lmm.solve_candidate(candidate)?;
    let p = lmm.p_omega();
    let idx = candidate.indices();
    let p_j = idx.len();
    let f = lmm.info();
    let shifted = lmm.shifted_design();
    let a = shifted.select_columns(idx);
    let v_j = solve.v();

    let (b, c, bt_rinv_b) = if candidate.is_full(p) {
        (
            DMatrix::zeros(lmm.m(), p),
            DMatrix::zeros(p, p),
            DMatrix::zeros(p, p),
        )
    } else {
        let all: Vec<usize> = (0..p).collect();
        let f_jw = submatrix(f, idx, &all);
        let coef = v_j * &f_jw;
        let mut t = -DMatrix::<f64>::identity(p, p);
        for (row, &col) in idx.iter().enumerate() {
            for k in 0..p {
                t[(col, k)] += coef[(row, k)];
            }
        }
        let b = shifted * &t;
        let c = symmetrize(&(f - f_jw.transpose() * &coef));
        let m = symmetrize(&(t.transpose() * lmm.shift_gram() * &t));
        (b, c, m)
    };

    let scale = spectral_norm_sym(f).max(f64::MIN_POSITIVE);
    if p > 0 && !candidate.is_full(p) {
        let min = min_eigenvalue(&c);
        if min < -1e-8 * scale {
            return Err(LmmError::NotPositiveDefinite {
                what: "C",
                min_eigenvalue: min,
            });
        }
    }

    let w_jj = submatrix(lmm.shift_gram(), idx, idx);
    let gamma = lmm.trace_rt_inv_lambda() + (v_j * w_jj).trace();
    let trace_r_pj = (v_j * submatrix(lmm.r_cross(), idx, idx)).trace();
    let info_inv = lmm.info_inverse().clone();
    let trace_c_info_inv = (&c * &info_inv).trace();
    let trace_m_info_inv = (&bt_rinv_b * &info_inv).trace();

    Ok(ShiftGeometry {
        candidate: candidate.clone(),
        n: lmm.n(),
        m: lmm.m(),
        p_j,
        p_omega: p,
        a,
        b,
        c,
        gamma,
        bt_rinv_b,
        info_inv,
        trace_rt_inv_lambda: lmm.trace_rt_inv_lambda(),
        log_det_rt: lmm.log_det_rt(),
        trace_r_pj,
        trace_c_info_inv,
        trace_m_info_inv,
        solve,
    })
}
