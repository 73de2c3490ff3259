//! Synthetic angular-radial data with a known threshold and GP tail.
//!
//! Each point is a tail point with probability `ζ`, placed at
//! `r = u(w) + Z` with `Z ~ GP(σ(w), ξ)`, and otherwise a body point drawn
//! uniformly from the ball of radius `u(w)` along `w`. The true `(1 - ζ)`
//! conditional quantile of the radius is therefore exactly `u(w)`.

use alloc::vec::Vec;

use rand::Rng;

use crate::angular::KdeModel;
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::radial::{gp_upper_quantile, XI_LOWER, XI_UPPER};
use crate::random::{open01, unit_vector_into};

#[derive(Debug, Clone, PartialEq)]
pub enum AngleLaw {
    Uniform,
    Kde(KdeModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub zeta: f64,
    /// `u(w) = threshold · (1 + threshold_modulation · w₀)`.
    pub threshold: f64,
    pub threshold_modulation: f64,
    /// `σ(w) = sigma · (1 + sigma_modulation · w₀)`.
    pub sigma: f64,
    pub sigma_modulation: f64,
    pub xi: f64,
    pub angles: AngleLaw,
}

impl SyntheticSpec {
    /// Stationary tail with uniform angles.
    pub fn stationary(dim: usize, zeta: f64, threshold: f64, sigma: f64, xi: f64) -> Self {
        Self { dim, zeta, threshold, threshold_modulation: 0.0, sigma, sigma_modulation: 0.0, xi, angles: AngleLaw::Uniform }
    }

    pub fn threshold_at(&self, w: &[f64]) -> f64 {
        self.threshold * (1.0 + self.threshold_modulation * w[0])
    }

    pub fn sigma_at(&self, w: &[f64]) -> f64 {
        self.sigma * (1.0 + self.sigma_modulation * w[0])
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("dimension must be at least 2"));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(invalid("zeta must lie in (0, 1]"));
        }
        if !(self.threshold > 0.0 && self.sigma > 0.0) {
            return Err(invalid("threshold and sigma must be positive"));
        }
        if !(self.threshold_modulation.abs() < 1.0 && self.sigma_modulation.abs() < 1.0) {
            return Err(invalid("modulations must lie in (-1, 1)"));
        }
        if !(XI_LOWER..=XI_UPPER).contains(&self.xi) {
            return Err(invalid("xi must lie in [-0.5, 0.1]"));
        }
        if let AngleLaw::Kde(k) = &self.angles {
            if k.dim() != self.dim {
                return Err(invalid("KDE dimension differs from the spec"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// Cartesian points, one per row.
    pub data: Matrix,
    /// Whether each point was drawn from the tail.
    pub tail: Vec<bool>,
}

pub fn generate<R: Rng + ?Sized>(spec: &SyntheticSpec, n: usize, rng: &mut R) -> Result<SyntheticSample> {
    spec.validate()?;
    let d = spec.dim;
    let mut data = Matrix::zeros(n, d);
    let mut tail = Vec::with_capacity(n);
    let mut w = alloc::vec![0.0; d];
    for i in 0..n {
        match &spec.angles {
            AngleLaw::Uniform => unit_vector_into(&mut w, rng),
            AngleLaw::Kde(k) => k.sample_into(&mut w, rng),
        }
        let u = spec.threshold_at(&w);
        let is_tail = open01(rng) < spec.zeta;
        let r = if is_tail { u + gp_upper_quantile(open01(rng), spec.sigma_at(&w), spec.xi) } else { u * libm::pow(open01(rng), 1.0 / d as f64) };
        for (o, c) in data.row_mut(i).iter_mut().zip(&w) {
            *o = r * c;
        }
        tail.push(is_tail);
    }
    Ok(SyntheticSample { data, tail })
}
