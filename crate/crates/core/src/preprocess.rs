//! Metocean preprocessing: directional components, log period,
//! standardisation and the steepness filter.
//!
//! Directions are compass degrees. Components follow `x = m cos θ`,
//! `y = m sin θ` with `θ` converted to radians unchanged, and the inverse is
//! `atan2(y, x)` mapped into `[0, 360)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;
/// Steepness above which sea states are treated as physically implausible.
pub const DEFAULT_STEEPNESS_CAP: f64 = 0.1;

/// Names of the five derived metocean variables, in column order.
pub const METOCEAN_COLUMNS: [&str; 5] = ["U_x", "U_y", "H_x", "H_y", "L_T"];
/// Names of the raw metocean variables, in column order.
pub const RAW_COLUMNS: [&str; 5] = ["H_s", "T_m", "theta_wave", "U_10", "theta_wind"];

pub fn components(magnitude: f64, direction_deg: f64) -> (f64, f64) {
    let t = direction_deg.to_radians();
    (magnitude * libm::cos(t), magnitude * libm::sin(t))
}

/// `(magnitude, direction in degrees ∈ [0, 360))`.
pub fn from_components(x: f64, y: f64) -> (f64, f64) {
    let mut deg = libm::atan2(y, x).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    if deg >= 360.0 {
        deg -= 360.0;
    }
    (libm::hypot(x, y), deg)
}

/// Raw rows `[H_s, T_m, θ_wave, U_10, θ_wind]` to derived rows
/// `[U_x, U_y, H_x, H_y, ln T_m]`.
pub fn derive_components(raw: &Matrix) -> Result<Matrix> {
    if raw.ncols() != 5 {
        return Err(Error::DimensionMismatch { expected: 5, found: raw.ncols() });
    }
    let mut out = Matrix::zeros(raw.nrows(), 5);
    for (i, r) in raw.rows().enumerate() {
        let (hs, tm, tw, u10, tu) = (r[0], r[1], r[2], r[3], r[4]);
        if !(tm > 0.0) {
            return Err(Error::NonPositivePeriod { row: i, value: tm });
        }
        let (ux, uy) = components(u10, tu);
        let (hx, hy) = components(hs, tw);
        out.row_mut(i).copy_from_slice(&[ux, uy, hx, hy, libm::log(tm)]);
    }
    Ok(out)
}

/// Inverse of [`derive_components`].
pub fn reconstruct_raw(derived: &Matrix) -> Result<Matrix> {
    if derived.ncols() != 5 {
        return Err(Error::DimensionMismatch { expected: 5, found: derived.ncols() });
    }
    let mut out = Matrix::zeros(derived.nrows(), 5);
    for (i, r) in derived.rows().enumerate() {
        let (u10, tu) = from_components(r[0], r[1]);
        let (hs, tw) = from_components(r[2], r[3]);
        out.row_mut(i).copy_from_slice(&[hs, libm::exp(r[4]), tw, u10, tu]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// One Cartesian component of a direction-magnitude pair; origin at zero.
    Component,
    /// Logarithm of a positive variable; centred at its mean.
    LogTransformed,
    /// Any other variable; centred at its mean.
    Plain,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Component => "component",
            Role::LogTransformed => "log",
            Role::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "component" => Some(Role::Component),
            "log" => Some(Role::LogTransformed),
            "plain" => Some(Role::Plain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    /// Sample standard deviation, always positive.
    pub scale: f64,
    /// Origin subtracted before scaling.
    pub offset: f64,
}

/// Everything needed to map normalised data back to derived variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    pub columns: Vec<ColumnSpec>,
    /// Set when the derived columns are the five metocean variables, so raw
    /// sea states can be reconstructed.
    pub metocean: bool,
}

impl PreprocessSpec {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Spec that leaves data unchanged.
    pub fn identity(names: &[&str]) -> Self {
        Self { columns: names.iter().map(|n| ColumnSpec { name: (*n).into(), role: Role::Plain, scale: 1.0, offset: 0.0 }).collect(), metocean: false }
    }
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Divides every column by its sample standard deviation after subtracting
/// its origin: zero for components, the mean otherwise.
pub fn normalize(derived: &Matrix, names: &[&str], roles: &[Role]) -> Result<(Matrix, PreprocessSpec)> {
    let d = derived.ncols();
    if names.len() != d || roles.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: names.len().min(roles.len()) });
    }
    if derived.nrows() < 2 {
        return Err(invalid("need at least two rows to standardise"));
    }
    let mut columns = Vec::with_capacity(d);
    for j in 0..d {
        let col = derived.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let (mean, std) = mean_std(&col);
        if !(std > 0.0) {
            return Err(Error::ZeroVariance { column: names[j].into() });
        }
        let offset = if roles[j] == Role::Component { 0.0 } else { mean };
        columns.push(ColumnSpec { name: names[j].into(), role: roles[j], scale: std, offset });
    }
    let spec = PreprocessSpec { metocean: names == METOCEAN_COLUMNS.as_slice(), columns };
    Ok((apply(derived, &spec), spec))
}

/// Applies an existing spec to new derived data.
pub fn apply(derived: &Matrix, spec: &PreprocessSpec) -> Matrix {
    let mut out = derived.clone();
    for i in 0..out.nrows() {
        for (v, c) in out.row_mut(i).iter_mut().zip(&spec.columns) {
            *v = (*v - c.offset) / c.scale;
        }
    }
    out
}

pub fn denormalize(normalized: &Matrix, spec: &PreprocessSpec) -> Result<Matrix> {
    if normalized.ncols() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: normalized.ncols() });
    }
    let mut out = normalized.clone();
    for i in 0..out.nrows() {
        for (v, c) in out.row_mut(i).iter_mut().zip(&spec.columns) {
            *v = *v * c.scale + c.offset;
        }
    }
    Ok(out)
}

/// `s = 2π H_s / (g T_m²)`.
pub fn steepness(hs: f64, tm: f64) -> f64 {
    2.0 * core::f64::consts::PI * hs / (GRAVITY * tm * tm)
}

/// Rows of raw metocean data whose steepness does not exceed `s_max`, and
/// the fraction removed.
pub fn filter_steepness(raw: &Matrix, s_max: f64) -> (Vec<usize>, f64) {
    let keep: Vec<usize> = raw.rows().enumerate().filter(|(_, r)| !(steepness(r[0], r[1]) > s_max)).map(|(i, _)| i).collect();
    let removed = if raw.nrows() == 0 { 0.0 } else { 1.0 - keep.len() as f64 / raw.nrows() as f64 };
    (keep, removed)
}
