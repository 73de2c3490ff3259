//! Radial tail model: an angle-dependent threshold `u(w)` fitted by quantile
//! regression, and a generalized Pareto (GP) distribution for the excess
//! `r - u(w)` with angle-dependent modified scale `ν(w)` and shape `ξ(w)`.
//!
//! Both heads are ReLU networks on the direction `w`. Their raw outputs are
//! mapped through fixed transforms:
//!
//! ```text
//! u = exp(a)        ν = exp(b₁)        ξ = -0.5 + 0.6·logistic(b₂)        σ = ν / (1 + ξ)
//! ```
//!
//! so `u > 0`, `ν > 0` and `ξ ∈ (-0.5, 0.1)` hold for every parameter value.

use alloc::vec::Vec;

use rand::Rng;

use crate::diagnostics::binomial_ci;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::nnet::{self, MlpArchitecture, MlpParams, OutputTransform, TrainConfig, TrainOutcome, Workspace};
use crate::random::rng_from_seed;
use crate::special::{logistic, logit};

pub const XI_LOWER: f64 = -0.5;
pub const XI_UPPER: f64 = 0.1;
/// Shape value at the start of GP training.
pub const XI_INIT: f64 = 0.05;
/// Below this `|ξ|` GP quantiles use the exponential limit.
pub const SMALL_XI: f64 = 1e-6;

#[inline]
pub fn threshold_from_raw(raw: f64) -> f64 {
    libm::exp(raw)
}

/// `(ν, ξ)` from the two raw GP outputs.
#[inline]
pub fn gp_from_raw(raw_nu: f64, raw_xi: f64) -> (f64, f64) {
    (libm::exp(raw_nu), XI_LOWER + (XI_UPPER - XI_LOWER) * logistic(raw_xi))
}

/// Tilted (pinball) loss `ρ_{1-ζ}(r - u)` and its derivative in `u`.
///
/// The subgradient at `r = u` is taken as zero.
pub fn tilted_loss(r: f64, u: f64, zeta: f64) -> (f64, f64) {
    let alpha = 1.0 - zeta;
    let t = r - u;
    if t > 0.0 {
        (t * alpha, -alpha)
    } else if t < 0.0 {
        (t * (alpha - 1.0), zeta)
    } else {
        (0.0, 0.0)
    }
}

/// `ln(1 + t) / t`, continuous through `t = 0`.
fn log1p_ratio(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        libm::log1p(t) / t
    }
}

/// `(t / (1 + t) - ln(1 + t)) / t²`, by its Taylor series near zero where
/// the direct form cancels.
fn shape_curvature(t: f64) -> f64 {
    if t.abs() < 1e-3 {
        // Σ_{k≥2} (-1)^{k+1} (k-1)/k t^{k-2}
        -0.5 + t * (2.0 / 3.0 + t * (-0.75 + t * (0.8 + t * (-5.0 / 6.0 + t * 6.0 / 7.0))))
    } else {
        (t / (1.0 + t) - libm::log1p(t)) / (t * t)
    }
}

/// GP negative log-likelihood with derivatives in `(σ, ξ)`.
///
/// Written in `t = ξ z / σ` so that one expression serves every `ξ`: at
/// `ξ = 0` it is exactly the exponential limit `ln σ + z/σ`, and it keeps
/// full precision when `ξ` is tiny but `t` is not (large excesses), where a
/// series in `ξ` alone breaks down.
fn gp_nll_sigma(z: f64, sigma: f64, xi: f64) -> (f64, f64, f64) {
    let y = z / sigma;
    let t = xi * y;
    let a = 1.0 + t;
    if a <= 0.0 {
        return (f64::INFINITY, 0.0, 0.0);
    }
    let value = libm::log(sigma) + libm::log1p(t) + y * log1p_ratio(t);
    let d_sigma = (1.0 - (1.0 + xi) * y / a) / sigma;
    let d_xi = y / a + y * y * shape_curvature(t);
    (value, d_sigma, d_xi)
}

/// Log density of the GP distribution at excess `z ≥ 0`; `-∞` beyond a finite
/// upper endpoint.
pub fn gp_log_density(z: f64, sigma: f64, xi: f64) -> f64 {
    -gp_nll_sigma(z, sigma, xi).0
}

/// GP negative log-likelihood of excess `z` under the modified-scale
/// parameterisation, returned as `(nll, ∂nll/∂ν, ∂nll/∂ξ)`.
///
/// The loss is `+∞` when `ξ < 0` and `z` reaches the endpoint `-σ/ξ`.
pub fn gp_nll(z: f64, nu: f64, xi: f64) -> Result<(f64, f64, f64)> {
    if z < 0.0 || z.is_nan() {
        return Err(invalid(alloc::format!("excess must be non-negative, got {z}")));
    }
    if !(nu > 0.0) || !(-1.0 < xi) {
        return Err(invalid("GP parameters need nu > 0 and xi > -1"));
    }
    let sigma = nu / (1.0 + xi);
    let (value, d_sigma, d_xi_fixed_sigma) = gp_nll_sigma(z, sigma, xi);
    if !value.is_finite() {
        return Ok((value, 0.0, 0.0));
    }
    let d_nu = d_sigma / (1.0 + xi);
    let d_xi = d_xi_fixed_sigma - d_sigma * sigma / (1.0 + xi);
    Ok((value, d_nu, d_xi))
}

/// Upper quantile of the GP distribution at exceedance probability `p`:
/// `σ/ξ (p^{-ξ} - 1)`, or `-σ ln p` as `ξ → 0`.
pub fn gp_upper_quantile(p: f64, sigma: f64, xi: f64) -> f64 {
    let lp = libm::log(p);
    if xi.abs() < SMALL_XI {
        -sigma * lp
    } else {
        sigma / xi * libm::expm1(-xi * lp)
    }
}

/// Radius exceeded with total probability `beta ≤ zeta` along a direction
/// with the given parameters: `u + GP quantile at β/ζ`.
pub fn exceedance_radius(p: &RadialParams, zeta: f64, beta: f64) -> f64 {
    p.u + gp_upper_quantile(beta / zeta, p.sigma, p.xi)
}

/// The threshold head `u(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub arch: MlpArchitecture,
    pub params: MlpParams,
    /// Exceedance probability the threshold was fitted for.
    pub zeta: f64,
}

impl ThresholdModel {
    pub fn new(arch: MlpArchitecture, params: MlpParams, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(invalid("zeta must lie in (0, 1)"));
        }
        if arch.output_dim != 1 || params.shapes() != arch.layer_shapes().as_slice() {
            return Err(invalid("threshold network must have one output and match its architecture"));
        }
        Ok(Self { arch, params, zeta })
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let mut ws = Workspace::new(&self.params);
        self.eval_with(w, &mut ws)
    }

    pub fn eval_with(&self, w: &[f64], ws: &mut Workspace) -> f64 {
        threshold_from_raw(nnet::forward_cached(&self.params, w, ws)[0])
    }
}

/// The GP head `(ν(w), ξ(w))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    pub arch: MlpArchitecture,
    pub params: MlpParams,
}

impl GpModel {
    pub fn new(arch: MlpArchitecture, params: MlpParams) -> Result<Self> {
        if arch.output_dim != 2 || params.shapes() != arch.layer_shapes().as_slice() {
            return Err(invalid("GP network must have two outputs and match its architecture"));
        }
        Ok(Self { arch, params })
    }

    /// `(ν, ξ)` at direction `w`.
    pub fn eval(&self, w: &[f64]) -> (f64, f64) {
        let mut ws = Workspace::new(&self.params);
        self.eval_with(w, &mut ws)
    }

    pub fn eval_with(&self, w: &[f64], ws: &mut Workspace) -> (f64, f64) {
        let raw = nnet::forward_cached(&self.params, w, ws);
        gp_from_raw(raw[0], raw[1])
    }
}

/// Threshold and GP parameters at one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialParams {
    pub u: f64,
    pub nu: f64,
    pub xi: f64,
    pub sigma: f64,
}

pub fn predict_radial(threshold: &ThresholdModel, gp: &GpModel, w: &[f64]) -> RadialParams {
    let u = threshold.eval(w);
    let (nu, xi) = gp.eval(w);
    RadialParams { u, nu, xi, sigma: nu / (1.0 + xi) }
}

/// Reusable scratch space for evaluating both heads many times.
#[derive(Debug, Clone)]
pub struct RadialEvaluator<'m> {
    threshold: &'m ThresholdModel,
    gp: &'m GpModel,
    ws_u: Workspace,
    ws_gp: Workspace,
}

impl<'m> RadialEvaluator<'m> {
    pub fn new(threshold: &'m ThresholdModel, gp: &'m GpModel) -> Self {
        Self { threshold, gp, ws_u: Workspace::new(&threshold.params), ws_gp: Workspace::new(&gp.params) }
    }

    pub fn eval(&mut self, w: &[f64]) -> RadialParams {
        let u = self.threshold.eval_with(w, &mut self.ws_u);
        let (nu, xi) = self.gp.eval_with(w, &mut self.ws_gp);
        RadialParams { u, nu, xi, sigma: nu / (1.0 + xi) }
    }
}

/// Linear-interpolated empirical quantile of sorted data at level `p`.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFit {
    pub model: ThresholdModel,
    /// Fraction of all observations strictly above the fitted threshold.
    pub exceedance_fraction: f64,
    /// Central 99% binomial band for that fraction around `ζ`.
    pub band: (f64, f64),
    /// Set when the fraction falls outside the band or training degraded.
    pub degraded: bool,
    pub training: TrainOutcome,
}

/// Fits `u(w)` as the `(1 - ζ)` conditional quantile of the radius by
/// minimising the mean tilted loss.
///
/// The output layer starts with zero weights and a bias at the log of the
/// unconditional `(1 - ζ)` quantile.
pub fn fit_threshold(angles: &Matrix, radii: &[f64], zeta: f64, hidden: &[usize], config: &TrainConfig) -> Result<ThresholdFit> {
    let n = radii.len();
    if angles.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: angles.nrows() });
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(invalid("zeta must lie in (0, 1)"));
    }
    if (n as f64) * zeta < 50.0 {
        return Err(invalid(alloc::format!("n·zeta = {} is below 50; too few exceedances", n as f64 * zeta)));
    }
    if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(invalid("radii must be positive and finite"));
    }
    let arch = MlpArchitecture::new(angles.ncols(), hidden.to_vec(), 1)?.with_transform(OutputTransform::Threshold);

    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted_quantile(&sorted, 1.0 - zeta);
    let mut rng = rng_from_seed(config.seed);
    let mut init = MlpParams::he_init(&arch, &mut rng);
    let last = init.layer_count() - 1;
    init.weights_mut(last).iter_mut().for_each(|v| *v = 0.0);
    init.bias_mut(last)[0] = libm::log(q);

    let loss = |i: usize, out: &[f64], g: &mut [f64]| {
        let u = threshold_from_raw(out[0]);
        let (l, du) = tilted_loss(radii[i], u, zeta);
        g[0] = du * u;
        l
    };
    let training = nnet::train(angles, &loss, init, config)?;
    let model = ThresholdModel::new(arch, training.params.clone(), zeta)?;

    let mut ws = Workspace::new(&model.params);
    let above = angles.rows().zip(radii).filter(|(w, &r)| r > model.eval_with(w, &mut ws)).count();
    let exceedance_fraction = above as f64 / n as f64;
    let (lo, hi) = binomial_ci(n as u64, zeta, 0.99);
    let band = (lo as f64 / n as f64, hi as f64 / n as f64);
    let degraded = training.degraded || exceedance_fraction < band.0 || exceedance_fraction > band.1;
    Ok(ThresholdFit { model, exceedance_fraction, band, degraded, training })
}

/// Observations strictly above the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Exceedances {
    pub indices: Vec<usize>,
    /// `r_i - u(w_i) > 0`, aligned with `indices`.
    pub excesses: Vec<f64>,
}

pub fn exceedance_set(angles: &Matrix, radii: &[f64], threshold: &ThresholdModel) -> Result<Exceedances> {
    let mut ws = Workspace::new(&threshold.params);
    let mut indices = Vec::new();
    let mut excesses = Vec::new();
    for (i, (w, &r)) in angles.rows().zip(radii).enumerate() {
        let u = threshold.eval_with(w, &mut ws);
        if r > u {
            indices.push(i);
            excesses.push(r - u);
        }
    }
    if indices.is_empty() {
        return Err(Error::NoExceedances);
    }
    Ok(Exceedances { indices, excesses })
}

/// GP network initialised so that `ξ(w) = 0.05` and `ν(w)` equals the mean
/// excess for every `w`: both output rows get zero weights and fixed biases.
pub fn init_gp_nonneg_shape<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], mean_excess: f64, rng: &mut R) -> Result<(MlpArchitecture, MlpParams)> {
    if !(mean_excess > 0.0) {
        return Err(invalid("mean excess must be positive"));
    }
    let arch = MlpArchitecture::new(input_dim, hidden.to_vec(), 2)?.with_transform(OutputTransform::GpParams);
    let mut params = MlpParams::he_init(&arch, rng);
    let last = params.layer_count() - 1;
    params.weights_mut(last).iter_mut().for_each(|v| *v = 0.0);
    let bias = params.bias_mut(last);
    bias[0] = libm::log(mean_excess);
    bias[1] = logit((XI_INIT - XI_LOWER) / (XI_UPPER - XI_LOWER));
    Ok((arch, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpFit {
    pub model: GpModel,
    pub training: TrainOutcome,
}

/// Fits `(ν(w), ξ(w))` by maximum likelihood on the threshold excesses.
pub fn fit_gp(angles: &Matrix, excesses: &[f64], hidden: &[usize], config: &TrainConfig) -> Result<GpFit> {
    let n = excesses.len();
    if angles.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: angles.nrows() });
    }
    if n < 50 {
        return Err(invalid(alloc::format!("{n} exceedances are too few for a GP fit (need 50)")));
    }
    if excesses.iter().any(|z| !(*z >= 0.0) || !z.is_finite()) {
        return Err(invalid("excesses must be non-negative and finite"));
    }
    let mean_excess = excesses.iter().sum::<f64>() / n as f64;
    let mut rng = rng_from_seed(config.seed);
    let (arch, init) = init_gp_nonneg_shape(angles.ncols(), hidden, mean_excess, &mut rng)?;
    let loss = |i: usize, out: &[f64], g: &mut [f64]| {
        let (nu, xi) = gp_from_raw(out[0], out[1]);
        match gp_nll(excesses[i], nu, xi) {
            Ok((l, d_nu, d_xi)) if l.is_finite() => {
                let s = (xi - XI_LOWER) / (XI_UPPER - XI_LOWER);
                g[0] = d_nu * nu;
                g[1] = d_xi * (XI_UPPER - XI_LOWER) * s * (1.0 - s);
                l
            }
            _ => f64::INFINITY,
        }
    };
    let training = nnet::train(angles, &loss, init, config)?;
    let model = GpModel::new(arch, training.params.clone())?;
    Ok(GpFit { model, training })
}
