//! The assembled model: angular KDE, threshold and GP heads, and the pool of
//! observed sub-threshold points used to simulate the body.

use alloc::vec::Vec;

use rand::Rng;

use crate::angular::{optimize_bandwidth, BandwidthCurve, BandwidthOptions, KdeModel};
use crate::error::{invalid, Error, Result};
use crate::geometry::{to_polar, SphereGrid};
use crate::linalg::{norm, Matrix};
use crate::nnet::TrainConfig;
use crate::preprocess::PreprocessSpec;
use crate::radial::{
    exceedance_radius, exceedance_set, fit_gp, fit_threshold, gp_log_density, gp_upper_quantile, predict_radial, GpFit, GpModel, RadialEvaluator, RadialParams,
    ThresholdFit, ThresholdModel,
};
use crate::random::{derive_seed, open01};

/// Default exceedance probability of the threshold.
pub const DEFAULT_ZETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SparModel {
    pub zeta: f64,
    pub kde: KdeModel,
    pub threshold: ThresholdModel,
    pub gp: GpModel,
    /// Observed points with `r ≤ u(w)`, one per row.
    pub body_pool: Matrix,
    pub preprocess: Option<PreprocessSpec>,
}

impl SparModel {
    pub fn new(zeta: f64, kde: KdeModel, threshold: ThresholdModel, gp: GpModel, body_pool: Matrix, preprocess: Option<PreprocessSpec>) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(invalid("zeta must lie in (0, 1)"));
        }
        if body_pool.nrows() == 0 {
            return Err(invalid("body pool is empty"));
        }
        let d = kde.dim();
        for found in [threshold.arch.input_dim, gp.arch.input_dim, body_pool.ncols()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        if let Some(p) = &preprocess {
            if p.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: p.dim() });
            }
        }
        Ok(Self { zeta, kde, threshold, gp, body_pool, preprocess })
    }

    pub fn dim(&self) -> usize {
        self.kde.dim()
    }

    pub fn radial(&self, w: &[f64]) -> RadialParams {
        predict_radial(&self.threshold, &self.gp, w)
    }

    pub fn evaluator(&self) -> RadialEvaluator<'_> {
        RadialEvaluator::new(&self.threshold, &self.gp)
    }

    /// `ln ζ + (1 - d) ln r + ln f_W(w) + ln f_GP(r - u(w))` for a point above
    /// the threshold surface; `-∞` beyond a finite GP endpoint.
    pub fn log_joint_density(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x.len() });
        }
        let r = norm(x);
        if !r.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        if r == 0.0 {
            return Err(Error::ZeroRow { row: 0 });
        }
        let w: Vec<f64> = x.iter().map(|v| v / r).collect();
        let p = self.radial(&w);
        if r <= p.u {
            return Err(Error::BelowThreshold { radius: r, threshold: p.u });
        }
        Ok(libm::log(self.zeta) + (1.0 - d as f64) * libm::log(r) + self.kde.log_density(&w) + gp_log_density(r - p.u, p.sigma, p.xi))
    }

    /// Radius along unit `w` exceeded with total probability `beta ∈ (0, ζ]`.
    pub fn contour_radius(&self, w: &[f64], beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        Ok(exceedance_radius(&self.radial(w), self.zeta, beta))
    }

    fn check_beta(&self, beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta <= self.zeta) {
            return Err(invalid(alloc::format!("beta must lie in (0, zeta = {}], got {beta}", self.zeta)));
        }
        Ok(())
    }

    /// Contour points `r_β(w) w` over the grid, with the angular density
    /// `f_W(w)` appended as a last column for masking sparse directions.
    pub fn contour_cloud(&self, grid: &SphereGrid, beta: f64) -> Result<Matrix> {
        self.check_beta(beta)?;
        let d = self.dim();
        if grid.d != d {
            return Err(Error::DimensionMismatch { expected: d, found: grid.d });
        }
        let mut eval = self.evaluator();
        let mut out = Matrix::zeros(grid.len(), d + 1);
        for (i, w) in grid.directions.rows().enumerate() {
            let r = exceedance_radius(&eval.eval(w), self.zeta, beta);
            let row = out.row_mut(i);
            for (o, c) in row.iter_mut().zip(w) {
                *o = r * c;
            }
            row[d] = libm::exp(self.kde.log_density(w));
        }
        Ok(out)
    }

    /// Number of tail rows in a simulated sample of size `n`.
    pub fn tail_count(&self, n: usize) -> usize {
        libm::round(self.zeta * n as f64) as usize
    }

    /// `n` points: the first `round(ζ n)` rows come from the tail model, the
    /// rest are resampled with replacement from the body pool.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let d = self.dim();
        let n_tail = self.tail_count(n);
        let mut out = Matrix::zeros(n, d);
        let mut eval = self.evaluator();
        for i in 0..n_tail {
            let row = out.row_mut(i);
            self.kde.sample_into(row, rng);
            let p = eval.eval(row);
            let r = p.u + gp_upper_quantile(open01(rng), p.sigma, p.xi);
            row.iter_mut().for_each(|v| *v *= r);
        }
        for i in n_tail..n {
            let j = rng.random_range(0..self.body_pool.nrows());
            out.row_mut(i).copy_from_slice(self.body_pool.row(j));
        }
        out
    }
}

/// A fitted model together with the fitting diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SparFit {
    pub model: SparModel,
    pub bandwidth: BandwidthCurve,
    pub threshold: ThresholdFit,
    pub gp: GpFit,
}

/// Fits every component in sequence: bandwidth and KDE on all directions,
/// then the threshold, then the GP on the exceedances.
///
/// `m_pred` is capped at the sample size. The two networks train with seeds
/// derived from `config.seed`.
pub fn fit_spar(
    data: &Matrix,
    zeta: f64,
    kde_options: &BandwidthOptions,
    hidden: &[usize],
    config: &TrainConfig,
    preprocess: Option<PreprocessSpec>,
) -> Result<SparFit> {
    let polar = to_polar(data)?;
    let opts = BandwidthOptions { m_pred: kde_options.m_pred.min(polar.len()), ..kde_options.clone() };
    let bandwidth = optimize_bandwidth(&polar.angles, &opts)?;
    let kde = KdeModel::new(polar.angles.clone(), bandwidth.kappa_star())?;

    let cfg_u = TrainConfig { seed: derive_seed(config.seed, 0), ..config.clone() };
    let threshold = fit_threshold(&polar.angles, &polar.radii, zeta, hidden, &cfg_u)?;
    let ex = exceedance_set(&polar.angles, &polar.radii, &threshold.model)?;
    let cfg_gp = TrainConfig { seed: derive_seed(config.seed, 1), ..config.clone() };
    let gp = fit_gp(&polar.angles.select_rows(&ex.indices), &ex.excesses, hidden, &cfg_gp)?;

    let mut is_tail = alloc::vec![false; polar.len()];
    ex.indices.iter().for_each(|&i| is_tail[i] = true);
    let body: Vec<usize> = (0..polar.len()).filter(|&i| !is_tail[i]).map(|i| polar.source_index[i]).collect();
    let body_pool = data.select_rows(&body);

    let model = SparModel::new(zeta, kde, threshold.model.clone(), gp.model.clone(), body_pool, preprocess)?;
    Ok(SparFit { model, bandwidth, threshold, gp })
}
