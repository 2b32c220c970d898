use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LmmError, Result};

/// What is known about the unsampled units of an area.
#[derive(Debug, Clone, PartialEq)]
pub enum UnsampledCovariates {
    /// Covariates of every unsampled unit, `r_i x p_omega`.
    Units(DMatrix<f64>),
    /// Population mean of the covariates over all `N_i` units.
    AreaMean(DVector<f64>),
}

/// Which predictive model the criteria target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictiveMode {
    /// One predictive row per unsampled unit.
    #[default]
    Unit,
    /// One predictive row per area: the mean of its unsampled units.
    Area,
}

impl std::str::FromStr for PredictiveMode {
    type Err = LmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(PredictiveMode::Unit),
            "area" => Ok(PredictiveMode::Area),
            other => Err(LmmError::InvalidConfig(format!(
                "unknown predictive mode '{other}' (expected unit or area)"
            ))),
        }
    }
}

impl std::fmt::Display for PredictiveMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictiveMode::Unit => "unit",
            PredictiveMode::Area => "area",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaRecord {
    pub id: String,
    /// `N_i`.
    pub population_size: usize,
    /// Sampled responses, length `n_i`.
    pub y: DVector<f64>,
    /// Sampled covariates, `n_i x p_omega`.
    pub x: DMatrix<f64>,
    pub unsampled: UnsampledCovariates,
}

impl AreaRecord {
    pub fn n_sampled(&self) -> usize {
        self.y.len()
    }

    /// `r_i = N_i - n_i`.
    pub fn n_unsampled(&self) -> usize {
        self.population_size - self.y.len()
    }

    /// `(N_i xbar_i - sum_k x_ik) / r_i`, or the mean of the unsampled rows.
    pub fn unsampled_mean(&self) -> Result<DVector<f64>> {
        let r = self.n_unsampled();
        if r == 0 {
            return Err(LmmError::AreaFullySampled { area: self.id.clone() });
        }
        Ok(match &self.unsampled {
            UnsampledCovariates::Units(xt) => xt.row_sum().transpose() / r as f64,
            UnsampledCovariates::AreaMean(mean) => {
                let sampled: DVector<f64> = self.x.row_sum().transpose();
                (mean * self.population_size as f64 - sampled) / r as f64
            }
        })
    }
}

/// Unit-level small-area sample for a nested error regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct NermData {
    areas: Vec<AreaRecord>,
    p_omega: usize,
}

impl NermData {
    /// Validates sizes and requires one coverage mode across all areas.
    pub fn new(areas: Vec<AreaRecord>) -> Result<Self> {
        let first = areas
            .first()
            .ok_or_else(|| LmmError::InvalidData("no areas".into()))?;
        let p = first.x.ncols();
        let unit_mode = matches!(first.unsampled, UnsampledCovariates::Units(_));
        for a in &areas {
            let n_i = a.y.len();
            if n_i == 0 {
                return Err(LmmError::InvalidData(format!("area {} has no sampled units", a.id)));
            }
            if a.x.shape() != (n_i, p) {
                return Err(LmmError::InvalidData(format!(
                    "area {}: covariates are {}x{}, expected {}x{}",
                    a.id,
                    a.x.nrows(),
                    a.x.ncols(),
                    n_i,
                    p
                )));
            }
            if a.population_size < n_i {
                return Err(LmmError::InvalidData(format!(
                    "area {}: population size {} below sample size {}",
                    a.id, a.population_size, n_i
                )));
            }
            match &a.unsampled {
                UnsampledCovariates::Units(xt) => {
                    if !unit_mode {
                        return Err(LmmError::InvalidData("mixed unit-level and area-level coverage".into()));
                    }
                    if xt.shape() != (a.n_unsampled(), p) {
                        return Err(LmmError::InvalidData(format!(
                            "area {}: {} unsampled rows for r_i = {}",
                            a.id,
                            xt.nrows(),
                            a.n_unsampled()
                        )));
                    }
                }
                UnsampledCovariates::AreaMean(m) => {
                    if unit_mode {
                        return Err(LmmError::InvalidData("mixed unit-level and area-level coverage".into()));
                    }
                    if m.len() != p {
                        return Err(LmmError::InvalidData(format!(
                            "area {}: covariate mean has length {}, expected {p}",
                            a.id,
                            m.len()
                        )));
                    }
                }
            }
            let values = a.y.iter().chain(a.x.iter()).chain(match &a.unsampled {
                UnsampledCovariates::Units(xt) => xt.as_slice().iter(),
                UnsampledCovariates::AreaMean(m) => m.as_slice().iter(),
            });
            if values.into_iter().any(|v| !v.is_finite()) {
                return Err(LmmError::InvalidData(format!("area {} contains non-finite values", a.id)));
            }
        }
        Ok(NermData { areas, p_omega: p })
    }

    pub fn areas(&self) -> &[AreaRecord] {
        &self.areas
    }
    pub fn q(&self) -> usize {
        self.areas.len()
    }
    pub fn n(&self) -> usize {
        self.areas.iter().map(AreaRecord::n_sampled).sum()
    }
    pub fn p_omega(&self) -> usize {
        self.p_omega
    }
    pub fn sample_sizes(&self) -> Vec<usize> {
        self.areas.iter().map(AreaRecord::n_sampled).collect()
    }
    pub fn has_unit_coverage(&self) -> bool {
        matches!(self.areas[0].unsampled, UnsampledCovariates::Units(_))
    }

    /// Stacked sampled responses.
    pub fn y(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.areas.iter().flat_map(|a| a.y.iter().copied()))
    }

    /// Stacked sampled covariates, `n x p_omega`.
    pub fn x(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n(), self.p_omega);
        let mut row = 0;
        for a in &self.areas {
            x.rows_mut(row, a.n_sampled()).copy_from(&a.x);
            row += a.n_sampled();
        }
        x
    }

    /// Replaces unit-level coverage by the population covariate means it implies.
    pub fn to_area_means(&self) -> NermData {
        let areas = self
            .areas
            .iter()
            .map(|a| {
                let unsampled = match &a.unsampled {
                    UnsampledCovariates::Units(xt) => {
                        let total: DVector<f64> = a.x.row_sum().transpose() + xt.row_sum().transpose();
                        UnsampledCovariates::AreaMean(total / a.population_size as f64)
                    }
                    other => other.clone(),
                };
                AreaRecord {
                    unsampled,
                    ..a.clone()
                }
            })
            .collect();
        NermData {
            areas,
            p_omega: self.p_omega,
        }
    }

    /// The same areas with a different response (e.g. a simulated draw).
    pub fn with_response(&self, y: &DVector<f64>) -> Result<NermData> {
        if y.len() != self.n() {
            return Err(LmmError::Dimension(format!(
                "response has length {}, expected {}",
                y.len(),
                self.n()
            )));
        }
        let mut offset = 0;
        let areas = self
            .areas
            .iter()
            .map(|a| {
                let n_i = a.n_sampled();
                let rec = AreaRecord {
                    y: y.rows(offset, n_i).into_owned(),
                    ..a.clone()
                };
                offset += n_i;
                rec
            })
            .collect();
        Ok(NermData {
            areas,
            p_omega: self.p_omega,
        })
    }
}
