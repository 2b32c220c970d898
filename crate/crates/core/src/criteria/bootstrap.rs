use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::ShiftGeometry;
use super::terms::{b1_correction, r3_r4_at};
use crate::error::{LmmError, Result};
use crate::lmm::{Lmm, ModelParams};
use crate::rng;

/// Covariance scale of the bootstrap error draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorScale {
    /// `eps ~ N(0, s2 I_n)`, the textbook resampling scheme.
    #[default]
    Identity,
    /// `eps ~ N(0, s2 R)` for models with a non-identity `R`.
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    pub error_scale: ErrorScale,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 1000,
            seed: 0,
            error_scale: ErrorScale::Identity,
        }
    }
}

/// Replication count below which bootstrap averages are flagged as noisy.
pub const MIN_RECOMMENDED_REPLICATIONS: usize = 100;

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        BootstrapConfig {
            replications,
            seed,
            ..Default::default()
        }
    }

    /// Rejects zero replications; returns a warning message below
    /// [`MIN_RECOMMENDED_REPLICATIONS`].
    pub fn validate(&self) -> Result<Option<String>> {
        if self.replications < 1 {
            return Err(LmmError::InvalidConfig(
                "bootstrap replications must be at least 1".into(),
            ));
        }
        if self.replications < MIN_RECOMMENDED_REPLICATIONS {
            return Ok(Some(format!(
                "bootstrap replications = {} is below the recommended minimum of {}",
                self.replications, MIN_RECOMMENDED_REPLICATIONS
            )));
        }
        Ok(None)
    }
}

/// Full-model refits on parametric bootstrap samples.
///
/// The samples depend only on the full-model estimate, so one set of draws
/// serves every candidate.
#[derive(Debug, Clone)]
pub struct BootstrapDraws {
    pub params: Vec<ModelParams>,
    pub rejected: usize,
}

/// Attempts per replicate before a degenerate resample is treated as fatal.
const MAX_ATTEMPTS: u64 = 16;

pub fn bootstrap_draws(lmm: &Lmm, eta: &ModelParams, cfg: &BootstrapConfig) -> Result<BootstrapDraws> {
    cfg.validate()?;
    let n = lmm.n() as f64;
    let dof = n - lmm.p_omega() as f64;
    let mean = lmm.design().x() * &eta.beta;
    let use_r = cfg.error_scale == ErrorScale::R;
    let scale = mean.norm_squared() + n * eta.sigma2;

    let results: Vec<(ModelParams, usize)> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = rng::stream(cfg.seed, &[rep as u64, attempt]);
                let y = &mean + lmm.simulate_noise(eta.sigma2, use_r, &mut rng);
                let (beta, rss) = lmm.full_refit(&y);
                if rss.is_finite() && rss > 1e-20 * scale {
                    let params = ModelParams {
                        beta,
                        sigma2: rss / dof,
                    };
                    return (params, attempt as usize);
                }
            }
            (
                ModelParams {
                    beta: eta.beta.clone(),
                    sigma2: f64::NAN,
                },
                MAX_ATTEMPTS as usize,
            )
        })
        .collect();

    let rejected: usize = results.iter().map(|(_, r)| r).sum();
    if rejected * 100 > cfg.replications || results.iter().any(|(p, _)| p.sigma2.is_nan()) {
        return Err(LmmError::BootstrapRejections {
            rejected,
            replications: cfg.replications,
        });
    }
    Ok(BootstrapDraws {
        params: results.into_iter().map(|(p, _)| p).collect(),
        rejected,
    })
}

/// Bootstrap-refined `(R3_hat, R4_hat)`.
pub fn bootstrap_r3_r4(geom: &ShiftGeometry, eta: &ModelParams, draws: &BootstrapDraws) -> (f64, f64) {
    if geom.candidate.is_full(geom.p_omega) {
        return (0.0, 0.0);
    }
    let base = r3_r4_at(geom, eta);
    let b1 = b1_correction(geom, eta);
    let per_draw: Vec<(f64, f64, f64)> = draws
        .params
        .par_iter()
        .map(|p| {
            let e = r3_r4_at(geom, p);
            (e.r3, e.r4, b1_correction(geom, p))
        })
        .collect();
    let k = per_draw.len() as f64;
    let (mut s3, mut s4, mut sb) = (0.0, 0.0, 0.0);
    for (r3, r4, b) in &per_draw {
        s3 += r3;
        s4 += r4;
        sb += b;
    }
    let r3_hat = 2.0 * base.r3 - s3 / k + sb / k - b1;
    let r4_hat = 2.0 * base.r4 - s4 / k;
    (r3_hat, r4_hat)
}
