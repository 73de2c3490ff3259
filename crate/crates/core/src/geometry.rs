//! Angular-radial coordinates and geometry on the unit hypersphere.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Tolerance used when validating that an input vector has unit length.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Observations split into radii and unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSample {
    pub radii: Vec<f64>,
    /// One unit vector per row.
    pub angles: Matrix,
    /// Row of the originating observation for every entry.
    pub source_index: Vec<usize>,
}

impl PolarSample {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.angles.ncols()
    }

    /// Sub-sample keeping `indices` (positions within this sample).
    pub fn select(&self, indices: &[usize]) -> PolarSample {
        PolarSample {
            radii: indices.iter().map(|&i| self.radii[i]).collect(),
            angles: self.angles.select_rows(indices),
            source_index: indices.iter().map(|&i| self.source_index[i]).collect(),
        }
    }
}

/// Splits every row `x` into `r = ‖x‖₂` and `w = x / r`.
pub fn to_polar(x: &Matrix) -> Result<PolarSample> {
    let mut radii = Vec::with_capacity(x.nrows());
    let mut angles = Matrix::zeros(x.nrows(), x.ncols());
    for (i, row) in x.rows().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let r = norm(row);
        if r == 0.0 {
            return Err(Error::ZeroRow { row: i });
        }
        for (a, v) in angles.row_mut(i).iter_mut().zip(row) {
            *a = v / r;
        }
        radii.push(r);
    }
    Ok(PolarSample { radii, angles, source_index: (0..x.nrows()).collect() })
}

/// Inverse of [`to_polar`]: row `i` is `radii[i] * angles[i]`.
pub fn from_polar(p: &PolarSample) -> Matrix {
    let mut out = Matrix::zeros(p.len(), p.dim());
    for (i, (&r, w)) in p.radii.iter().zip(p.angles.rows()).enumerate() {
        for (o, v) in out.row_mut(i).iter_mut().zip(w) {
            *o = r * v;
        }
    }
    out
}

/// Pseudo-regular directions on `𝕊^{d-1}`: the lattice points of the `L¹`
/// sphere of radius `m`, projected radially onto the `L²` unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    pub directions: Matrix,
    /// Lattice points per positive half-axis.
    pub m: usize,
    pub d: usize,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Number of directions produced by [`sphere_grid`]:
/// `Σ_{k=1}^{min(d,m)} 2^k C(d,k) C(m-1,k-1)`.
pub fn sphere_grid_len(d: usize, m: usize) -> u128 {
    fn choose(n: u128, k: u128) -> u128 {
        if k > n {
            return 0;
        }
        (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
    }
    if d == 0 || m == 0 {
        return 0;
    }
    (1..=d.min(m))
        .map(|k| {
            let k = k as u128;
            (1u128 << k) * choose(d as u128, k) * choose(m as u128 - 1, k - 1)
        })
        .sum()
}

pub fn sphere_grid(d: usize, m: usize) -> Result<SphereGrid> {
    if d < 2 {
        return Err(invalid("sphere grid needs dimension d >= 2"));
    }
    if m < 1 {
        return Err(invalid("sphere grid needs resolution m >= 1"));
    }
    let mut directions = Matrix::with_cols(d);
    let mut seen = BTreeSet::new();
    let mut lattice = vec![0i64; d];
    let mut unit = vec![0.0; d];
    enumerate_l1(&mut lattice, 0, m as i64, &mut |p| {
        let l2 = libm::sqrt(p.iter().map(|&v| (v * v) as f64).sum::<f64>());
        for (u, &v) in unit.iter_mut().zip(p) {
            *u = v as f64 / l2;
        }
        let key: Vec<u64> = unit.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            directions.push_row(&unit);
        }
    });
    Ok(SphereGrid { directions, m, d })
}

/// Visits every integer vector whose trailing entries from `pos` have absolute
/// values summing to exactly `remaining`, in lexicographic order.
fn enumerate_l1(p: &mut [i64], pos: usize, remaining: i64, visit: &mut impl FnMut(&[i64])) {
    if pos == p.len() - 1 {
        if remaining == 0 {
            p[pos] = 0;
            visit(p);
        } else {
            for v in [-remaining, remaining] {
                p[pos] = v;
                visit(p);
            }
        }
        return;
    }
    for v in -remaining..=remaining {
        p[pos] = v;
        enumerate_l1(p, pos + 1, remaining - v.abs(), visit);
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(Error::NotUnit { norm: n });
    }
    Ok(())
}

/// Householder reflection taking `e₁` to a unit vector `mu`.
///
/// Stored as the unit normal of the reflecting hyperplane; `None` stands for
/// the identity (when `mu` already equals `e₁`).
#[derive(Debug, Clone, PartialEq)]
pub struct Householder {
    normal: Option<Vec<f64>>,
}

impl Householder {
    pub fn to(mu: &[f64]) -> Result<Self> {
        check_unit(mu)?;
        let mut u = mu.iter().map(|v| -v).collect::<Vec<_>>();
        u[0] += 1.0;
        let len = norm(&u);
        if len < 1e-12 {
            return Ok(Self { normal: None });
        }
        u.iter_mut().for_each(|v| *v /= len);
        Ok(Self { normal: Some(u) })
    }

    /// `x ← (I - 2uuᵀ) x`.
    #[inline]
    pub fn apply(&self, x: &mut [f64]) {
        if let Some(u) = &self.normal {
            let s = 2.0 * dot(u, x);
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi -= s * ui;
            }
        }
    }

    pub fn matrix(&self, d: usize) -> Matrix {
        let mut p = Matrix::identity(d);
        if let Some(u) = &self.normal {
            for i in 0..d {
                for j in 0..d {
                    p[(i, j)] -= 2.0 * u[i] * u[j];
                }
            }
        }
        p
    }
}

/// The `d×d` orthogonal, symmetric matrix `P` with `P e₁ = mu`.
pub fn householder_to(mu: &[f64]) -> Result<Matrix> {
    Ok(Householder::to(mu)?.matrix(mu.len()))
}

/// `t·mu + √(1-t²)·v` for a unit `v` orthogonal to `mu`.
pub fn tangent_normal_compose(t: f64, v: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(invalid("tangent-normal coefficient must lie in [-1, 1]"));
    }
    if v.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: v.len() });
    }
    check_unit(mu)?;
    check_unit(v)?;
    let d = dot(v, mu);
    if d.abs() >= 1e-10 {
        return Err(Error::NotOrthogonal { dot: d });
    }
    let s = libm::sqrt((1.0 - t) * (1.0 + t));
    Ok(mu.iter().zip(v).map(|(m, v)| t * m + s * v).collect())
}

/// Great-circle distance between unit vectors, in `[0, π]`.
#[inline]
pub fn angular_distance(w: &[f64], u: &[f64]) -> f64 {
    libm::acos(dot(w, u).clamp(-1.0, 1.0))
}
