//! Dense linear-algebra helpers shared by the model layers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{LmmError, Result};

/// Relative tolerance used for the column-rank check of design matrices.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Relative pivot tolerance for declaring a matrix numerically non-SPD.
pub const SPD_PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Factorization of a symmetric positive-definite matrix.
///
/// Diagonal inputs keep their diagonal so that large identity-like error
/// covariances cost O(m) instead of O(m^3).
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Diagonal(DVector<f64>),
    Dense(Cholesky<f64, Dyn>),
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        check_square(matrix, what)?;
        check_symmetric(matrix, what)?;
        let n = matrix.nrows();
        if n == 0 {
            return Ok(SpdFactor::Diagonal(DVector::zeros(0)));
        }
        let floor = SPD_PIVOT_TOLERANCE * matrix.trace() / n as f64;
        if is_diagonal(matrix) {
            let diag = matrix.diagonal();
            if diag.iter().any(|&d| !(d > floor) || !d.is_finite()) {
                return Err(LmmError::NotPositiveDefinite {
                    what,
                    min_eigenvalue: diag.min(),
                });
            }
            return Ok(SpdFactor::Diagonal(diag));
        }
        let not_spd = || LmmError::NotPositiveDefinite {
            what,
            min_eigenvalue: min_eigenvalue(matrix),
        };
        let chol = matrix.clone().cholesky().ok_or_else(not_spd)?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d * d)
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot >= floor) {
            return Err(not_spd());
        }
        Ok(SpdFactor::Dense(chol))
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdFactor::Diagonal(d) => d.len(),
            SpdFactor::Dense(c) => c.l_dirty().nrows(),
        }
    }

    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Diagonal(d) => v.component_div(d),
            SpdFactor::Dense(c) => c.solve(v),
        }
    }

    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                out
            }
            SpdFactor::Dense(c) => c.solve(m),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            SpdFactor::Diagonal(d) => d.iter().map(|x| x.ln()).sum(),
            SpdFactor::Dense(c) => 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            SpdFactor::Diagonal(d) => DMatrix::from_diagonal(&d.map(|x| 1.0 / x)),
            SpdFactor::Dense(c) => symmetrize(&c.inverse()),
        }
    }

    /// Returns `L z` where `L L^T` is the factored matrix.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Diagonal(d) => z.component_mul(&d.map(f64::sqrt)),
            SpdFactor::Dense(c) => c.l_dirty().lower_triangle() * z,
        }
    }

    /// Returns `tr(M^{-1} B)` for the factored matrix `M`.
    pub fn trace_solve(&self, b: &DMatrix<f64>) -> f64 {
        match self {
            SpdFactor::Diagonal(d) => (0..d.len()).map(|i| b[(i, i)] / d[i]).sum(),
            SpdFactor::Dense(c) => c.solve(b).trace(),
        }
    }

    /// Returns `B^T M^{-1} B`.
    pub fn quad_form(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Diagonal(_) => symmetrize(&(b.transpose() * self.solve_mat(b))),
            SpdFactor::Dense(c) => {
                let half = c.l().solve_lower_triangular(b).expect("factor is nonsingular");
                half.transpose() * half
            }
        }
    }
}

/// Square-root factor of a symmetric positive-semidefinite matrix.
///
/// Returns `S` with `S S^T = M`, tolerating exact zero eigenvalues.
pub fn psd_sqrt(matrix: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_square(matrix, what)?;
    check_symmetric(matrix, what)?;
    if is_diagonal(matrix) {
        let diag = matrix.diagonal();
        if diag.iter().any(|&d| d < 0.0) {
            return Err(LmmError::NotPositiveDefinite {
                what,
                min_eigenvalue: diag.min(),
            });
        }
        return Ok(DMatrix::from_diagonal(&diag.map(f64::sqrt)));
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(LmmError::NotPositiveDefinite {
            what,
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Numerical column rank via column-pivoted QR with relative tolerance.
pub fn column_rank(x: &DMatrix<f64>, rel_tol: f64) -> usize {
    if x.ncols() == 0 || x.nrows() == 0 {
        return 0;
    }
    let r = x.clone().col_piv_qr().r();
    let k = r.nrows().min(r.ncols());
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    (0..k).filter(|&i| r[(i, i)].abs() > rel_tol * lead).count()
}

pub fn require_full_column_rank(x: &DMatrix<f64>, what: impl Into<String>) -> Result<()> {
    let rank = column_rank(x, RANK_TOLERANCE);
    if rank < x.ncols() {
        return Err(LmmError::RankDeficient {
            what: what.into(),
            rank,
            cols: x.ncols(),
        });
    }
    Ok(())
}

pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return f64::NAN;
    }
    symmetrize(matrix).symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

pub fn check_square(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(LmmError::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_symmetric(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOLERANCE * scale || worst.is_nan() {
        return Err(LmmError::NotSymmetric {
            what,
            asymmetry: worst,
        });
    }
    Ok(())
}

/// Extracts the sub-matrix on the given rows and columns.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    m.select_columns(cols)
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().amax()
}

/// Spectral norm of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn dense_factor_solves_and_logdets() {
        let a = spd3();
        let f = SpdFactor::new(&a, "A").unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = f.solve_vec(&v);
        assert_relative_eq!(&a * x, v, epsilon = 1e-12);
        assert_relative_eq!(f.log_det(), a.determinant().ln(), epsilon = 1e-12);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        assert_relative_eq!(f.quad_form(&b), b.transpose() * a.clone().try_inverse().unwrap() * &b, epsilon = 1e-12);
        let z = DVector::from_vec(vec![0.3, 0.1, -0.7]);
        let l = a.clone().cholesky().unwrap().l();
        assert_relative_eq!(f.mul_lower(&z), l * z, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_fast_path() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 4.0]));
        let f = SpdFactor::new(&d, "D").unwrap();
        assert!(matches!(f, SpdFactor::Diagonal(_)));
        assert_relative_eq!(f.log_det(), 4.0_f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(f.inverse()[(1, 1)], 2.0);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 2.0]);
        assert_relative_eq!(f.quad_form(&b)[(0, 0)], 0.5 + 2.0 + 1.0, epsilon = 1e-14);
    }

    #[test]
    fn indefinite_matrix_reports_negative_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdFactor::new(&a, "A") {
            Err(LmmError::NotPositiveDefinite { min_eigenvalue, .. }) => {
                assert_relative_eq!(min_eigenvalue, -1.0, epsilon = 1e-12)
            }
            other => panic!("expected non-SPD error, got {other:?}"),
        }
    }

    #[test]
    fn near_singular_pivot_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(SpdFactor::new(&a, "A").is_err());
    }

    #[test]
    fn asymmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            SpdFactor::new(&a, "A"),
            Err(LmmError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn rank_detects_duplicate_columns() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 1.0, 1.0, 1.0]);
        assert_eq!(column_rank(&x, RANK_TOLERANCE), 2);
        assert!(require_full_column_rank(&x, "X").is_err());
        assert!(require_full_column_rank(&x.columns(0, 2).into_owned(), "X").is_ok());
    }

    #[test]
    fn psd_sqrt_handles_zero_matrix() {
        let g = DMatrix::<f64>::zeros(3, 3);
        let s = psd_sqrt(&g, "G").unwrap();
        assert_eq!(s, DMatrix::zeros(3, 3));
        let a = spd3();
        let s = psd_sqrt(&a, "A").unwrap();
        assert_relative_eq!(&s * s.transpose(), a, epsilon = 1e-12);
    }
}
