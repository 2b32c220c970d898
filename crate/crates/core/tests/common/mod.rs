#![allow(dead_code)]

use caishift::{DesignSet, Lmm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian_matrix(k, k, rng);
    let s = &a * a.transpose() / k as f64 + DMatrix::identity(k, k);
    (&s + s.transpose()) * 0.5
}

/// Block indicator matrix for areas of the given sizes.
pub fn area_indicator(sizes: &[usize]) -> DMatrix<f64> {
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

/// A general shifted design with dense SPD `G`, `R` and `Rt`.
pub fn random_shifted_lmm(n: usize, m: usize, q: usize, p: usize, rng: &mut ChaCha8Rng) -> Lmm {
    let x = gaussian_matrix(n, p, rng);
    let z = gaussian_matrix(n, q, rng);
    let xt = gaussian_matrix(m, p, rng);
    let zt = gaussian_matrix(m, q, rng);
    let g = random_spd(q, rng) * 0.5;
    let r = random_spd(n, rng);
    let rt = random_spd(m, rng);
    Lmm::new(DesignSet::new(x, z, xt, zt, g, r, rt).unwrap()).unwrap()
}

/// A nested-error design with `q` areas of `n_i` sampled and `r_i`
/// unsampled units, identity errors and `G = psi I`.
pub fn nerm_lmm(q: usize, n_i: usize, r_i: usize, p: usize, psi: f64, rng: &mut ChaCha8Rng) -> Lmm {
    let x = gaussian_matrix(q * n_i, p, rng);
    let xt = gaussian_matrix(q * r_i, p, rng);
    let z = area_indicator(&vec![n_i; q]);
    let zt = area_indicator(&vec![r_i; q]);
    let design = DesignSet::new(
        x,
        z,
        xt,
        zt,
        DMatrix::identity(q, q) * psi,
        DMatrix::identity(q * n_i, q * n_i),
        DMatrix::identity(q * r_i, q * r_i),
    )
    .unwrap();
    Lmm::new(design).unwrap()
}
