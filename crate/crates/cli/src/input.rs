//! CSV ingestion for the nested error regression schema.
//!
//! The unit file has columns `area`, `unit`, `y` and any number of covariate
//! columns; rows with an empty `y` are unsampled units. The optional
//! area-means file has columns `area`, `N` and one column per covariate,
//! named either like the covariate or with an `xbar` prefix (`xbar1` for
//! `x1`, `xbar_far` for `far`). An intercept column `const` is always added
//! in front of the covariates.

use caishift::smallarea::{AreaRecord, NermData, UnsampledCovariates};
use caishift::CandidateModel;
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{CliError, Result};

pub const INTERCEPT: &str = "const";

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: NermData,
    /// Column names of the design, starting with [`INTERCEPT`].
    pub columns: Vec<String>,
}

#[derive(Default)]
struct AreaRows {
    id: String,
    sampled: Vec<(f64, Vec<f64>)>,
    unsampled: Vec<Vec<f64>>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let h: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut seen = HashMap::new();
    for (k, name) in h.iter().enumerate() {
        if let Some(prev) = seen.insert(name.as_str(), k) {
            return Err(CliError::input(format!(
                "{}: column '{name}' appears twice (positions {} and {})",
                path.display(),
                prev + 1,
                k + 1
            )));
        }
    }
    Ok(h)
}

fn require(h: &[String], name: &str, path: &Path) -> Result<usize> {
    h.iter()
        .position(|c| c == name)
        .ok_or_else(|| CliError::input(format!("{}: missing column '{name}'", path.display())))
}

fn number(cell: &str, row: usize, col: &str, path: &Path) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        CliError::input(format!(
            "{}: row {row}, column '{col}': '{cell}' is not a number",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::input(format!(
            "{}: row {row}, column '{col}': value is not finite",
            path.display()
        )));
    }
    Ok(v)
}

pub fn load(data_path: &Path, means_path: Option<&Path>) -> Result<LoadedData> {
    let mut rdr = reader(data_path)?;
    let h = headers(&mut rdr, data_path)?;
    let (ia, iu, iy) = (
        require(&h, "area", data_path)?,
        require(&h, "unit", data_path)?,
        require(&h, "y", data_path)?,
    );
    let cov_idx: Vec<usize> = (0..h.len()).filter(|k| ![ia, iu, iy].contains(k)).collect();
    if cov_idx.iter().any(|&k| h[k] == INTERCEPT) {
        return Err(CliError::input(format!(
            "{}: column name '{INTERCEPT}' is reserved for the intercept",
            data_path.display()
        )));
    }

    let mut areas: Vec<AreaRows> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut units: HashMap<(String, String), usize> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let area = rec.get(ia).unwrap_or("").to_string();
        let unit = rec.get(iu).unwrap_or("").to_string();
        if area.is_empty() || unit.is_empty() {
            return Err(CliError::input(format!(
                "{}: row {row}: area and unit must be non-empty",
                data_path.display()
            )));
        }
        if let Some(first) = units.insert((area.clone(), unit.clone()), row) {
            return Err(CliError::input(format!(
                "{}: row {row}: duplicate unit '{unit}' in area '{area}' (first seen on row {first})",
                data_path.display()
            )));
        }
        let mut x = Vec::with_capacity(cov_idx.len() + 1);
        x.push(1.0);
        for &c in &cov_idx {
            x.push(number(rec.get(c).unwrap_or(""), row, &h[c], data_path)?);
        }
        let slot = *by_id.entry(area.clone()).or_insert_with(|| {
            areas.push(AreaRows {
                id: area.clone(),
                ..Default::default()
            });
            areas.len() - 1
        });
        match rec.get(iy).unwrap_or("") {
            "" => areas[slot].unsampled.push(x),
            y => {
                let y = number(y, row, "y", data_path)?;
                areas[slot].sampled.push((y, x));
            }
        }
    }
    if areas.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", data_path.display())));
    }
    let mut columns = vec![INTERCEPT.to_string()];
    columns.extend(cov_idx.iter().map(|&k| h[k].clone()));

    let means = match means_path {
        Some(p) => {
            if areas.iter().any(|a| !a.unsampled.is_empty()) {
                return Err(CliError::input(
                    "unsampled unit rows and an area-means file cannot be combined",
                ));
            }
            Some(load_means(p, &columns[1..])?)
        }
        None => None,
    };

    let p = columns.len();
    let mut records = Vec::with_capacity(areas.len());
    for a in areas {
        let n_i = a.sampled.len();
        if n_i == 0 {
            return Err(CliError::input(format!("area '{}' has no sampled units", a.id)));
        }
        let y = DVector::from_iterator(n_i, a.sampled.iter().map(|s| s.0));
        let x = DMatrix::from_fn(n_i, p, |r, c| a.sampled[r].1[c]);
        let (population_size, unsampled) = match &means {
            Some(m) => {
                let (big_n, xbar) = m.get(&a.id).ok_or_else(|| {
                    CliError::input(format!("area '{}' is missing from the area-means file", a.id))
                })?;
                if *big_n < n_i {
                    return Err(CliError::input(format!(
                        "area '{}': N = {big_n} is below its {n_i} sampled units",
                        a.id
                    )));
                }
                let mut v = vec![1.0];
                v.extend(xbar);
                (*big_n, UnsampledCovariates::AreaMean(DVector::from_vec(v)))
            }
            None => {
                let r = a.unsampled.len();
                let xt = DMatrix::from_fn(r, p, |i, c| a.unsampled[i][c]);
                (n_i + r, UnsampledCovariates::Units(xt))
            }
        };
        records.push(AreaRecord {
            id: a.id,
            population_size,
            y,
            x,
            unsampled,
        });
    }
    if let Some(m) = &means {
        let known: std::collections::HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        let mut extra: Vec<&String> = m.keys().filter(|k| !known.contains(k.as_str())).collect();
        extra.sort();
        if let Some(k) = extra.first() {
            return Err(CliError::input(format!("area-means file lists area '{k}' with no sampled units")));
        }
    }
    Ok(LoadedData {
        data: NermData::new(records)?,
        columns,
    })
}

fn means_column_matches(column: &str, covariate: &str) -> bool {
    if column == covariate {
        return true;
    }
    match column.strip_prefix("xbar") {
        Some(rest) => rest.strip_prefix('_') == Some(covariate) || covariate.strip_prefix('x') == Some(rest),
        None => false,
    }
}

fn load_means(path: &Path, covariates: &[String]) -> Result<HashMap<String, (usize, Vec<f64>)>> {
    let mut rdr = reader(path)?;
    let h = headers(&mut rdr, path)?;
    let ia = require(&h, "area", path)?;
    let in_ = require(&h, "N", path)?;
    let mut idx = Vec::with_capacity(covariates.len());
    for c in covariates {
        let k = h
            .iter()
            .position(|col| means_column_matches(col, c))
            .ok_or_else(|| CliError::input(format!("{}: missing mean column for covariate '{c}'", path.display())))?;
        idx.push(k);
    }
    if h.len() != covariates.len() + 2 {
        return Err(CliError::input(format!(
            "{}: expected area, N and {} covariate columns, found {} columns",
            path.display(),
            covariates.len(),
            h.len()
        )));
    }
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let area = rec.get(ia).unwrap_or("").to_string();
        let n_cell = rec.get(in_).unwrap_or("");
        let big_n: usize = n_cell.parse().map_err(|_| {
            CliError::input(format!(
                "{}: row {row}, column 'N': '{n_cell}' is not a nonnegative integer",
                path.display()
            ))
        })?;
        let xbar = idx
            .iter()
            .map(|&c| number(rec.get(c).unwrap_or(""), row, &h[c], path))
            .collect::<Result<Vec<f64>>>()?;
        if out.insert(area.clone(), (big_n, xbar)).is_some() {
            return Err(CliError::input(format!("{}: row {row}: duplicate area '{area}'", path.display())));
        }
    }
    Ok(out)
}

/// Candidate from covariate names; the intercept is always included.
pub fn parse_model(names: &[String], columns: &[String]) -> Result<CandidateModel> {
    let mut idx = vec![0];
    for name in names {
        let k = columns.iter().position(|c| c == name).ok_or_else(|| {
            CliError::input(format!(
                "unknown covariate '{name}' in model (available: {})",
                columns[1..].join(", ")
            ))
        })?;
        idx.push(k);
    }
    idx.sort_unstable();
    idx.dedup();
    Ok(CandidateModel::new(idx, columns.len())?)
}

/// `const+x1+x3`.
pub fn model_label(c: &CandidateModel, columns: &[String]) -> String {
    c.indices().iter().map(|&k| columns[k].as_str()).collect::<Vec<_>>().join("+")
}
