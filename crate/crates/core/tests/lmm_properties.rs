mod common;

use caishift::criteria::McEstimate;
use caishift::{CandidateModel, DesignSet, Lmm, TruthParams};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn truth_on_leading(p: usize, support: usize) -> TruthParams {
    let beta = DVector::from_fn(p, |i, _| if i < support { 1.0 - 0.3 * i as f64 } else { 0.0 });
    TruthParams::new(beta, 1.3).unwrap()
}

#[test]
fn full_model_variance_is_unbiased() {
    let mut r = rng(11);
    let lmm = nerm_lmm(10, 3, 3, 5, 0.8, &mut r);
    let truth = truth_on_leading(5, 3);
    let vals: Vec<f64> = (0..4000)
        .map(|_| {
            let y = lmm.simulate_response(&truth, &mut r);
            lmm.full_model_unbiased(&y).unwrap().sigma2
        })
        .collect();
    let est = McEstimate::from_samples(&vals);
    assert!(
        (est.mean - truth.sigma2_star).abs() < 3.0 * est.se,
        "mean {} se {}",
        est.mean,
        est.se
    );
}

#[test]
fn scaled_ml_variance_follows_chi_square() {
    let mut r = rng(12);
    let lmm = nerm_lmm(10, 3, 3, 6, 1.0, &mut r);
    let truth = truth_on_leading(6, 2);
    let cand = CandidateModel::leading(3, 6).unwrap();
    let n = lmm.n() as f64;
    let df = n - 3.0;
    let vals: Vec<f64> = (0..5000)
        .map(|_| {
            let y = lmm.simulate_response(&truth, &mut r);
            n * lmm.gls_fit(&y, &cand).unwrap().sigma2_hat / truth.sigma2_star
        })
        .collect();
    let est = McEstimate::from_samples(&vals);
    assert!((est.mean - df).abs() < 3.0 * est.se, "mean {} vs {df}", est.mean);
    let var = vals.iter().map(|v| (v - est.mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    // Relative SE of a sample variance is sqrt((kurtosis - 1) / T); chi-square kurtosis is 3 + 12 / df.
    let rel_se = ((2.0 + 12.0 / df) / vals.len() as f64).sqrt();
    assert!((var / (2.0 * df) - 1.0).abs() < 3.0 * rel_se, "var {var} vs {}", 2.0 * df);
}

#[test]
fn full_candidate_projection_equals_full_model_projection() {
    let mut r = rng(13);
    let x = gaussian_matrix(24, 3, &mut r);
    let z = area_indicator(&[6; 4]);
    let lmm = Lmm::new(
        DesignSet::no_shift(x, z, DMatrix::identity(4, 4) * 0.7, DMatrix::identity(24, 24)).unwrap(),
    )
    .unwrap();
    assert_eq!(lmm.m(), lmm.n());
    let pr = lmm.projections(&CandidateModel::full(3)).unwrap();
    assert!((&pr.p_j - &pr.p_omega).abs().max() < 1e-12);
}

fn small_design(seed: u64) -> (Lmm, DVector<f64>) {
    let mut r = rng(seed);
    let lmm = random_shifted_lmm(18, 7, 3, 4, &mut r);
    let y = gaussian_vector(18, &mut r);
    (lmm, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gls_residual_is_sigma_orthogonal_to_candidate_columns(seed in 0u64..10_000, mask in 1usize..16) {
        let (lmm, y) = small_design(seed);
        let cand = CandidateModel::new((0..4).filter(|b| mask >> b & 1 == 1), 4).unwrap();
        let fit = lmm.gls_fit(&y, &cand).unwrap();
        let x_j = lmm.design().x().select_columns(cand.indices());
        let resid = &y - &x_j * &fit.beta_hat;
        let normal = x_j.transpose() * lmm.covariance().solve(&resid);
        prop_assert!(normal.amax() < 1e-9 * (1.0 + y.amax()));
    }

    #[test]
    fn nested_candidates_never_fit_worse(seed in 0u64..10_000, mask in 0usize..8) {
        let (lmm, y) = small_design(seed);
        let small = CandidateModel::new(std::iter::once(0).chain((1..4).filter(|b| mask >> (b - 1) & 1 == 1)), 4).unwrap();
        let big = CandidateModel::full(4);
        let s_small = lmm.gls_fit(&y, &small).unwrap().sigma2_hat;
        let s_big = lmm.gls_fit(&y, &big).unwrap().sigma2_hat;
        prop_assert!(s_big <= s_small * (1.0 + 1e-12));
    }

    #[test]
    fn projections_are_idempotent_in_sigma_metric(seed in 0u64..10_000) {
        let (lmm, _) = small_design(seed);
        let pr = lmm.projections(&CandidateModel::new([0, 2], 4).unwrap()).unwrap();
        let sigma = lmm.covariance().sigma();
        let lhs = &pr.p_j * sigma * &pr.p_j;
        prop_assert!((lhs - &pr.p_j).amax() < 1e-8 * pr.p_j.amax().max(1.0));
    }
}
