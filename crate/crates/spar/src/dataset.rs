//! From a CSV file to the normalised matrix the model sees, and back.

use spar_core::preprocess::{self, PreprocessSpec, Role, METOCEAN_COLUMNS};
use spar_core::Matrix;

use crate::config::{DataKind, RunConfig};
use crate::error::{AppError, Result};
use crate::io::{read_columns, IngestReport, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub raw: Table,
    /// Model variables before standardisation.
    pub derived: Matrix,
    pub normalized: Matrix,
    pub spec: PreprocessSpec,
    pub report: IngestReport,
}

fn derive(cfg: &RunConfig, raw: &Matrix) -> Result<Matrix> {
    match cfg.data.kind {
        DataKind::Metocean => Ok(preprocess::derive_components(raw)?),
        DataKind::Generic => Ok(raw.clone()),
    }
}

/// Reads the configured data and standardises it from scratch.
pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    let (raw, report) = read_columns(&cfg.data.path, &cfg.data.columns)?;
    let derived = derive(cfg, &raw.data)?;
    let (names, roles): (Vec<&str>, Vec<Role>) = match cfg.data.kind {
        DataKind::Metocean => (METOCEAN_COLUMNS.to_vec(), vec![Role::Component, Role::Component, Role::Component, Role::Component, Role::LogTransformed]),
        DataKind::Generic => (cfg.data.columns.iter().map(String::as_str).collect(), cfg.roles()),
    };
    let (normalized, spec) = preprocess::normalize(&derived, &names, &roles)?;
    Ok(Dataset { raw, derived, normalized, spec, report })
}

/// Reads the configured data and standardises it with an existing spec.
pub fn load_with_spec(cfg: &RunConfig, spec: &PreprocessSpec) -> Result<Dataset> {
    let (raw, report) = read_columns(&cfg.data.path, &cfg.data.columns)?;
    let derived = derive(cfg, &raw.data)?;
    if derived.ncols() != spec.dim() {
        return Err(AppError::Usage(format!("data has {} model variables but the model expects {}", derived.ncols(), spec.dim())));
    }
    let normalized = preprocess::apply(&derived, spec);
    Ok(Dataset { raw, derived, normalized, spec: spec.clone(), report })
}

/// Physical-unit view of normalised points: column names and values.
///
/// Metocean models yield `H_s, T_m, theta_wave, U_10, theta_wind` followed by
/// the four directional components; other models yield their own columns.
pub fn to_physical(normalized: &Matrix, spec: Option<&PreprocessSpec>) -> Result<(Vec<String>, Matrix)> {
    let Some(spec) = spec else {
        let names = (0..normalized.ncols()).map(|j| format!("x{j}")).collect();
        return Ok((names, normalized.clone()));
    };
    let derived = preprocess::denormalize(normalized, spec)?;
    if !spec.metocean {
        return Ok((spec.columns.iter().map(|c| c.name.clone()).collect(), derived));
    }
    let raw = preprocess::reconstruct_raw(&derived)?;
    let mut names: Vec<String> = preprocess::RAW_COLUMNS.iter().map(|s| s.to_string()).collect();
    names.extend(METOCEAN_COLUMNS[..4].iter().map(|s| s.to_string()));
    let mut out = Matrix::with_cols(9);
    for (r, d) in raw.rows().zip(derived.rows()) {
        let mut row = r.to_vec();
        row.extend_from_slice(&d[..4]);
        out.push_row(&row);
    }
    Ok((names, out))
}

/// Rows of a metocean sample whose steepness is at most `cap`, and the
/// fraction removed. Other samples pass through.
pub fn steepness_filter(normalized: &Matrix, spec: Option<&PreprocessSpec>, cap: f64) -> Result<(Matrix, f64)> {
    match spec {
        Some(s) if s.metocean => {
            let raw = preprocess::reconstruct_raw(&preprocess::denormalize(normalized, s)?)?;
            let (keep, removed) = preprocess::filter_steepness(&raw, cap);
            Ok((normalized.select_rows(&keep), removed))
        }
        _ => Ok((normalized.clone(), 0.0)),
    }
}

/// Variables for marginal tail diagnostics: every model variable, then
/// `H_s`, `U_10` and steepness for metocean data, or the radius otherwise.
pub fn marginal_variables(normalized: &Matrix, spec: Option<&PreprocessSpec>) -> Result<(Vec<String>, Matrix)> {
    let d = normalized.ncols();
    let mut names: Vec<String> = match spec {
        Some(s) => s.columns.iter().map(|c| c.name.clone()).collect(),
        None => (0..d).map(|j| format!("x{j}")).collect(),
    };
    let metocean = spec.is_some_and(|s| s.metocean);
    let extra = if metocean { 3 } else { 1 };
    let mut out = Matrix::with_cols(d + extra);
    let raw = match spec {
        Some(s) if metocean => Some(preprocess::reconstruct_raw(&preprocess::denormalize(normalized, s)?)?),
        _ => None,
    };
    for (i, x) in normalized.rows().enumerate() {
        let mut row = x.to_vec();
        match &raw {
            Some(raw) => {
                let r = raw.row(i);
                row.extend_from_slice(&[r[0], r[3], preprocess::steepness(r[0], r[1])]);
            }
            None => row.push(spar_core::linalg::norm(x)),
        }
        out.push_row(&row);
    }
    if metocean {
        names.extend(["H_s", "U_10", "steepness"].map(String::from));
    } else {
        names.push("radius".into());
    }
    Ok((names, out))
}
