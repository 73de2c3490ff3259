//! Angular density: power-spherical kernel density estimation on `𝕊^{d-1}`.
//!
//! The power-spherical kernel with mean direction `μ` and concentration `κ` is
//!
//! ```text
//! K(w; μ, κ) = (4π)^{-η} Γ(2η+κ) / Γ(η+κ) · z^κ,   z = (1 + wᵀμ) / 2,   η = (d-1)/2
//! ```
//!
//! and is always handled in log space. `κ = 0` is the uniform distribution.
//! The marginal `T = wᵀμ` is an affine Beta variable, which gives an exact,
//! rejection-free sampler.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Householder, UNIT_TOLERANCE};
use crate::linalg::{dot, norm, Matrix};
use crate::random::{beta_pair, rng_from_seed, unit_vector_into};
use crate::special::{ln_gamma, log_sum_exp};

/// Kernel terms further than this below the leading term (in log space) are
/// dropped during bandwidth search; their relative contribution is < 1e-26.
const LOG_TRUNCATION: f64 = -60.0;

/// Log of the power-spherical normalising constant.
pub fn ps_log_norm(kappa: f64, d: usize) -> f64 {
    let eta = 0.5 * (d as f64 - 1.0);
    -eta * libm::log(4.0 * PI) + ln_gamma(2.0 * eta + kappa) - ln_gamma(eta + kappa)
}

/// `κ · ln((1 + c) / 2)` with the conventions `0 · ln 0 = 0`.
#[inline]
fn kernel_exponent(kappa: f64, cos: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    kappa * libm::log(0.5 * (1.0 + cos.clamp(-1.0, 1.0)))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(invalid(alloc::format!("bandwidth must be finite and non-negative, got {kappa}")));
    }
    Ok(())
}

/// Log density of the power-spherical distribution at `w`.
///
/// Returns `-∞` for the antipode of `mu` when `κ > 0`.
pub fn ps_log_density(w: &[f64], mu: &[f64], kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if w.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: w.len() });
    }
    Ok(ps_log_norm(kappa, mu.len()) + kernel_exponent(kappa, dot(w, mu)))
}

/// Kernel density estimate of the angular density.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    centers: Matrix,
    kappa: f64,
    log_norm: f64,
}

impl KdeModel {
    pub fn new(centers: Matrix, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if centers.is_empty() {
            return Err(invalid("a kernel density estimate needs at least one centre"));
        }
        if centers.ncols() < 2 {
            return Err(invalid("directions need dimension d >= 2"));
        }
        for row in centers.rows() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::NotUnit { norm: n });
            }
        }
        let log_norm = ps_log_norm(kappa, centers.ncols());
        Ok(Self { centers, kappa, log_norm })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `(d - 1) / 2`.
    pub fn eta(&self) -> f64 {
        0.5 * (self.dim() as f64 - 1.0)
    }

    /// Log of the mixture density at the unit vector `w`.
    pub fn log_density(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(w.len(), self.dim());
        let lse = log_sum_exp(self.centers.rows().map(|c| kernel_exponent(self.kappa, dot(w, c))));
        self.log_norm + lse - libm::log(self.len() as f64)
    }

    /// Like [`log_density`](Self::log_density) but averaging only over the
    /// centres whose indices are not in `exclude`.
    pub fn log_density_excluding(&self, w: &[f64], exclude: &[usize]) -> Result<f64> {
        let mut keep = vec![true; self.len()];
        for &i in exclude {
            if i < keep.len() {
                keep[i] = false;
            }
        }
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return Err(Error::AllExcluded);
        }
        let lse = log_sum_exp(self.centers.rows().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| kernel_exponent(self.kappa, dot(w, c))));
        Ok(self.log_norm + lse - libm::log(kept as f64))
    }

    /// Draws `count` directions: a uniformly chosen centre, then a kernel draw.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(count, self.dim());
        for i in 0..count {
            self.sample_into(out.row_mut(i), rng);
        }
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        let c = rng.random_range(0..self.len());
        let h = Householder::to(self.centers.row(c)).expect("centres are unit vectors");
        sample_ps_into(&h, self.kappa, out, rng);
    }
}

/// One power-spherical draw around the direction encoded by `h`.
fn sample_ps_into<R: Rng + ?Sized>(h: &Householder, kappa: f64, out: &mut [f64], rng: &mut R) {
    let d = out.len();
    let eta = 0.5 * (d as f64 - 1.0);
    let (z, zc) = beta_pair(kappa + eta, eta, rng);
    // t = 2z - 1 and 1 - t² = 4 z (1 - z), both free of cancellation
    let t = z - zc;
    let s = 2.0 * libm::sqrt(z * zc);
    out[0] = t;
    unit_vector_into(&mut out[1..], rng);
    out[1..].iter_mut().for_each(|v| *v *= s);
    h.apply(out);
}

/// `count` independent power-spherical draws with mean direction `mu`.
pub fn sample_ps<R: Rng + ?Sized>(mu: &[f64], kappa: f64, count: usize, rng: &mut R) -> Result<Matrix> {
    check_kappa(kappa)?;
    let h = Householder::to(mu)?;
    let mut out = Matrix::zeros(count, mu.len());
    for i in 0..count {
        sample_ps_into(&h, kappa, out.row_mut(i), rng);
    }
    Ok(out)
}

/// `count` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (libm::log10(lo), libm::log10(hi));
            (0..count).map(|i| if i == count - 1 { hi } else { libm::pow(10.0, a + (b - a) * i as f64 / (count - 1) as f64) }).collect()
        }
    }
}

/// Settings for the predictive-likelihood bandwidth search.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthOptions {
    /// Candidate bandwidths, ascending and positive.
    pub kappa_grid: Vec<f64>,
    /// Number of evaluation points drawn from the sample.
    pub m_pred: usize,
    /// Half-width of the window of serially correlated neighbours left out
    /// around each evaluation point.
    pub k_exclude: usize,
    pub seed: u64,
}

impl Default for BandwidthOptions {
    fn default() -> Self {
        Self { kappa_grid: log_spaced(1e1, 1e4, 50), m_pred: 1000, k_exclude: 48, seed: 0 }
    }
}

/// Predictive negative log-likelihood over the bandwidth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthCurve {
    pub kappa: Vec<f64>,
    pub nll: Vec<f64>,
    /// Index of the minimising grid value (ties go to the smaller `κ`).
    pub best: usize,
    /// Evaluation points used for every grid value.
    pub eval_indices: Vec<usize>,
}

impl BandwidthCurve {
    pub fn kappa_star(&self) -> f64 {
        self.kappa[self.best]
    }
}

/// Chooses `κ` by minimising the leave-window-out predictive negative
/// log-likelihood at `m_pred` randomly chosen observations.
///
/// For evaluation point `i` the centres `i-k ..= i+k` (clipped to the sample)
/// are left out, so that serially correlated neighbours do not inflate the
/// likelihood.
pub fn optimize_bandwidth(angles: &Matrix, opts: &BandwidthOptions) -> Result<BandwidthCurve> {
    let n = angles.nrows();
    let d = angles.ncols();
    if opts.kappa_grid.is_empty() {
        return Err(invalid("bandwidth grid is empty"));
    }
    if opts.kappa_grid.iter().any(|&k| !(k > 0.0) || !k.is_finite()) || opts.kappa_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bandwidth grid must be positive and strictly ascending"));
    }
    if opts.m_pred == 0 || opts.m_pred > n {
        return Err(invalid(alloc::format!("m_pred must lie in 1..={n}, got {}", opts.m_pred)));
    }
    if n <= 2 * opts.k_exclude + 1 {
        return Err(invalid(alloc::format!("{n} observations cannot support an exclusion window of ±{}", opts.k_exclude)));
    }

    let mut rng = rng_from_seed(opts.seed);
    let eval_indices = rand::seq::index::sample(&mut rng, n, opts.m_pred).into_vec();
    let log_norms: Vec<f64> = opts.kappa_grid.iter().map(|&k| ps_log_norm(k, d)).collect();
    let mut nll = vec![0.0; opts.kappa_grid.len()];
    let mut log_z = Vec::with_capacity(n);

    for &i in &eval_indices {
        let w = angles.row(i);
        let lo = i.saturating_sub(opts.k_exclude);
        let hi = (i + opts.k_exclude).min(n - 1);
        log_z.clear();
        log_z.extend(angles.rows().enumerate().filter(|(j, _)| *j < lo || *j > hi).map(|(_, c)| libm::log(0.5 * (1.0 + dot(w, c).clamp(-1.0, 1.0)))));
        let ln_count = libm::log(log_z.len() as f64);
        log_z.sort_unstable_by(|a, b| b.total_cmp(a));
        let lead = log_z[0];
        for ((&kappa, &log_norm), total) in opts.kappa_grid.iter().zip(&log_norms).zip(&mut nll) {
            let lse = if lead == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let mut sum = 0.0;
                for &lz in &log_z {
                    let e = kappa * (lz - lead);
                    if e < LOG_TRUNCATION {
                        break;
                    }
                    sum += libm::exp(e);
                }
                kappa * lead + libm::log(sum)
            };
            *total -= log_norm + lse - ln_count;
        }
    }

    let mut best = 0;
    for (k, v) in nll.iter().enumerate() {
        if *v < nll[best] {
            best = k;
        }
    }
    Ok(BandwidthCurve { kappa: opts.kappa_grid.clone(), nll, best, eval_indices })
}
