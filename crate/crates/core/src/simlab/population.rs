use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{LmmError, Result};
use crate::rng;

/// Number of covariates including the intercept: `1, FAR, TRN, TRN^2, DST,
/// DST^2, FOOT, FOOT^2`.
pub const LAND_PRICE_COVARIATES: usize = 8;

pub const COVARIATE_NAMES: [&str; LAND_PRICE_COVARIATES] =
    ["const", "far", "trn", "trn2", "dst", "dst2", "foot", "foot2"];

/// Parameters of the synthetic land-price sample that stands in for the
/// unpublished original data.
///
/// Units: `FAR` is the floor-area ratio (1.0 = 100%), `TRN` and `FOOT` are
/// travel times in tens of minutes, `DST` is in kilometres, and the response
/// is the log of the price in hundreds of thousands of yen per square metre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    /// Coefficients of the eight covariates on the log scale.
    pub beta: [f64; LAND_PRICE_COVARIATES],
    pub tau2: f64,
    pub sigma2: f64,
    pub trn_range: (f64, f64),
    /// Log-normal `(median, log-sd)` of `FAR`.
    pub far: (f64, f64),
    /// Log-normal `(median, log-sd)` of `DST`.
    pub dst: (f64, f64),
    /// Tens of walking minutes per kilometre.
    pub foot_per_km: f64,
    /// Log-sd of the route detour multiplying `DST` into `FOOT`.
    pub foot_noise: f64,
    /// Range of the frame-size factor `M_i / n_i`, i.e. of the sample weights.
    pub weight_range: (f64, f64),
    /// Log-sd of the area allocation weights; larger is more skewed.
    pub allocation_skew: f64,
    pub min_n_i: usize,
    pub max_n_i: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            beta: [1.6, 0.15, -0.25, 0.01, -0.10, 0.0, -0.08, 0.0],
            tau2: 0.0225,
            sigma2: 0.0275,
            trn_range: (1.5, 7.0),
            far: (2.0, 0.5),
            dst: (0.8, 0.6),
            foot_per_km: 1.25,
            foot_noise: 0.15,
            weight_range: (3.0, 12.0),
            allocation_skew: 0.8,
            min_n_i: 2,
            max_n_i: 12,
        }
    }
}

/// One unit of the original sample or of the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandUnit {
    pub area: usize,
    pub price: f64,
    pub far: f64,
    pub trn: f64,
    pub dst: f64,
    pub foot: f64,
}

impl LandUnit {
    pub fn covariates(&self) -> [f64; LAND_PRICE_COVARIATES] {
        [
            1.0,
            self.far,
            self.trn,
            self.trn * self.trn,
            self.dst,
            self.dst * self.dst,
            self.foot,
            self.foot * self.foot,
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OriginalSample {
    pub units: Vec<LandUnit>,
    pub sample_sizes: Vec<usize>,
    /// Sample weight `M_i / n_i` of every unit in area `i`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticPopulation {
    /// Units grouped by area, in area order.
    pub units: Vec<LandUnit>,
    /// Original-sample index each population unit was copied from.
    pub source: Vec<usize>,
    pub area_sizes: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub original: OriginalSample,
}

impl SyntheticPopulation {
    pub fn q(&self) -> usize {
        self.area_sizes.len()
    }

    /// Start offset of each area's units.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.area_sizes
            .iter()
            .map(|&s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }

    /// Finite-population mean price of each area.
    pub fn area_means(&self) -> Vec<f64> {
        self.offsets()
            .iter()
            .zip(&self.area_sizes)
            .map(|(&o, &s)| self.units[o..o + s].iter().map(|u| u.price).sum::<f64>() / s as f64)
            .collect()
    }
}

/// Skewed allocation of `n` units to `q` areas within `[min, max]`.
pub fn allocate_sample_sizes<R: Rng + ?Sized>(
    q: usize,
    n: usize,
    min: usize,
    max: usize,
    skew: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if q * min > n || q * max < n || min == 0 {
        return Err(LmmError::InvalidConfig(format!(
            "cannot allocate {n} units to {q} areas with sizes in [{min}, {max}]"
        )));
    }
    let dist = LogNormal::new(0.0, skew.max(1e-12)).map_err(|e| LmmError::InvalidConfig(e.to_string()))?;
    let w: Vec<f64> = (0..q).map(|_| dist.sample(rng)).collect();
    let mut sizes = vec![min; q];
    let mut remaining = n - q * min;
    // Largest-remainder allocation of the surplus, respecting the cap.
    while remaining > 0 {
        let open: Vec<usize> = (0..q).filter(|&i| sizes[i] < max).collect();
        let total: f64 = open.iter().map(|&i| w[i]).sum();
        let mut shares: Vec<(usize, f64)> = open.iter().map(|&i| (i, remaining as f64 * w[i] / total)).collect();
        let mut given = 0;
        for (i, s) in &shares {
            let add = (s.floor() as usize).min(max - sizes[*i]);
            sizes[*i] += add;
            given += add;
        }
        if given == 0 {
            shares.sort_by(|a, b| b.1.fract().total_cmp(&a.1.fract()).then(a.0.cmp(&b.0)));
            let (i, _) = shares[0];
            sizes[i] += 1;
            given = 1;
        }
        remaining -= given;
    }
    Ok(sizes)
}

pub fn generate_original_sample<R: Rng + ?Sized>(
    q: usize,
    n: usize,
    params: &GeneratorParams,
    rng: &mut R,
) -> Result<OriginalSample> {
    let sizes = allocate_sample_sizes(q, n, params.min_n_i, params.max_n_i, params.allocation_skew, rng)?;
    let bad = |e: &dyn std::fmt::Display| LmmError::InvalidConfig(e.to_string());
    let trn = Uniform::new(params.trn_range.0, params.trn_range.1).map_err(|e| bad(&e))?;
    let far = LogNormal::new(params.far.0.ln(), params.far.1).map_err(|e| bad(&e))?;
    let dst = LogNormal::new(params.dst.0.ln(), params.dst.1).map_err(|e| bad(&e))?;
    let detour = LogNormal::new(0.0, params.foot_noise).map_err(|e| bad(&e))?;
    let area_effect = Normal::new(0.0, params.tau2.sqrt()).map_err(|e| bad(&e))?;
    let unit_error = Normal::new(0.0, params.sigma2.sqrt()).map_err(|e| bad(&e))?;
    let weight = Uniform::new(params.weight_range.0, params.weight_range.1).map_err(|e| bad(&e))?;

    let mut units = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(q);
    for (i, &n_i) in sizes.iter().enumerate() {
        let trn_i = trn.sample(rng);
        let v_i = area_effect.sample(rng);
        weights.push(weight.sample(rng));
        for _ in 0..n_i {
            let d = dst.sample(rng).clamp(0.05, 5.0);
            let mut u = LandUnit {
                area: i,
                price: 0.0,
                far: far.sample(rng).clamp(0.3, 10.0),
                trn: trn_i,
                dst: d,
                foot: d * params.foot_per_km * detour.sample(rng),
            };
            let x = u.covariates();
            let mean: f64 = x.iter().zip(&params.beta).map(|(a, b)| a * b).sum();
            u.price = (mean + v_i + unit_error.sample(rng)).exp();
            units.push(u);
        }
    }
    Ok(OriginalSample {
        units,
        sample_sizes: sizes,
        weights,
    })
}

/// Keeps every original unit once and adds `size - n` draws with
/// replacement, each unit selected with probability proportional to the
/// inverse of its sample weight. Draws leaving an area without unsampled
/// units are repeated.
pub fn resample_population<R: Rng + ?Sized>(
    original: &OriginalSample,
    size: usize,
    rng: &mut R,
) -> Result<SyntheticPopulation> {
    let n = original.units.len();
    if size <= n {
        return Err(LmmError::InvalidConfig(format!(
            "population size {size} must exceed the sample size {n}"
        )));
    }
    let q = original.sample_sizes.len();
    let probs: Vec<f64> = original.units.iter().map(|u| 1.0 / original.weights[u.area]).collect();
    let dist = rand::distr::weighted::WeightedIndex::new(&probs)
        .map_err(|e| LmmError::InvalidConfig(format!("resampling weights: {e}")))?;
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let extra: Vec<usize> = (0..size - n).map(|_| dist.sample(rng)).collect();
        let mut counts = vec![0usize; q];
        for &k in &extra {
            counts[original.units[k].area] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        let mut source: Vec<usize> = (0..n).chain(extra).collect();
        source.sort_by_key(|&k| (original.units[k].area, k));
        let units = source.iter().map(|&k| original.units[k]).collect();
        let area_sizes = original.sample_sizes.iter().zip(&counts).map(|(s, c)| s + c).collect();
        return Ok(SyntheticPopulation {
            units,
            source,
            area_sizes,
            sample_sizes: original.sample_sizes.clone(),
            original: original.clone(),
        });
    }
    Err(LmmError::Simulation(format!(
        "no resample without fully sampled areas in {MAX_ATTEMPTS} attempts"
    )))
}

/// The synthetic original sample followed by the resampled population.
pub fn generate_synthetic_population(
    q: usize,
    n: usize,
    size: usize,
    params: &GeneratorParams,
    seed: u64,
) -> Result<SyntheticPopulation> {
    let original = generate_original_sample(q, n, params, &mut rng::stream(seed, &[10]))?;
    resample_population(&original, size, &mut rng::stream(seed, &[11]))
}

/// Simple random sample without replacement of `n_i` units per area;
/// returns the population indices of the sampled units of each area.
pub fn draw_area_sample<R: Rng + ?Sized>(pop: &SyntheticPopulation, rng: &mut R) -> Vec<Vec<usize>> {
    pop.offsets()
        .iter()
        .zip(pop.area_sizes.iter().zip(&pop.sample_sizes))
        .map(|(&o, (&big_n, &n_i))| {
            let mut idx: Vec<usize> = index::sample(rng, big_n, n_i).into_iter().map(|k| o + k).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

pub fn covariate_vector(u: &LandUnit) -> DVector<f64> {
    DVector::from_row_slice(&u.covariates())
}
