//! Model-assessment battery: angular cell counts, Voronoi observed-versus-
//! expected tables with exact binomial bounds, angular-bin QQ data, marginal
//! tail curves, threshold-stability sweeps and block-bootstrap envelopes.
//!
//! Every function returns plain tables; nothing here renders or tests
//! hypotheses beyond the binomial bounds.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::geometry::{angular_distance, PolarSample, SphereGrid};
use crate::linalg::{dot, Matrix};
use crate::nnet::TrainConfig;
use crate::radial::{exceedance_radius, exceedance_set, fit_gp, fit_threshold, sorted_quantile, RadialEvaluator};
use crate::random::{derive_seed, rng_from_seed};
use crate::special::ln_choose;

/// Angular radius of the counting caps, in degrees.
pub const DEFAULT_THETA_MAX_DEG: f64 = 15.0;
/// Minimum observations for a QQ bin.
pub const DEFAULT_MIN_COUNT: usize = 200;
/// One observation per day of hourly data.
pub const DEFAULT_STRIDE: usize = 24;
pub const DEFAULT_N_BOOT: usize = 200;
/// Four days of hourly data.
pub const DEFAULT_BLOCK_LEN: usize = 96;
/// Total exceedance level of the conditional quantile in stability sweeps.
pub const DEFAULT_Q_LEVEL: f64 = 1e-6;

/// `ζ = 0.0125, 0.025, …, 0.25`.
pub fn default_zeta_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.0125).collect()
}

/// Number of observations within angular distance `theta_max` (radians) of
/// each grid direction. Caps may overlap, so counts can sum to more than `n`.
pub fn cell_counts(angles: &Matrix, grid: &SphereGrid, theta_max: f64) -> Result<Vec<u64>> {
    if !(theta_max > 0.0) {
        return Err(invalid("theta_max must be positive"));
    }
    let mut counts = vec![0u64; grid.len()];
    for w in angles.rows() {
        for (j, u) in grid.directions.rows().enumerate() {
            if angular_distance(w, u) < theta_max {
                counts[j] += 1;
            }
        }
    }
    Ok(counts)
}

/// Index of the nearest grid direction for every observation; ties go to the
/// lowest index.
pub fn voronoi_assign(angles: &Matrix, grid: &SphereGrid) -> Vec<usize> {
    angles
        .rows()
        .map(|w| {
            let mut best = 0;
            let mut best_dot = f64::NEG_INFINITY;
            for (j, u) in grid.directions.rows().enumerate() {
                let c = dot(w, u);
                if c > best_dot {
                    best_dot = c;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `P(N ≤ k)` for `N ~ Binomial(n, p)`.
///
/// The pmf is accumulated by its ratio recursion. When `(1-p)^n` would
/// underflow the sum runs outwards from `k` in scaled form instead.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    let ratio = p / q;
    if n as f64 * libm::log1p(-p) > -700.0 {
        let mut pmf = libm::pow(q, n as f64);
        let mut sum = pmf;
        for j in 0..k {
            pmf *= (n - j) as f64 / (j + 1) as f64 * ratio;
            sum += pmf;
        }
        return sum.min(1.0);
    }
    let log_pmf = |j: u64| ln_choose(n, j) + j as f64 * libm::log(p) + (n - j) as f64 * libm::log1p(-p);
    let mean = n as f64 * p;
    if (k as f64) < mean {
        // lower tail: terms shrink as j decreases from k
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut j = k;
        while j > 0 {
            term *= j as f64 / (n - j + 1) as f64 / ratio;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            j -= 1;
        }
        (libm::exp(log_pmf(k)) * sum).min(1.0)
    } else {
        // complement of the upper tail, whose terms shrink as j grows past k
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut j = k + 1;
        while j < n {
            term *= (n - j) as f64 / (j + 1) as f64 * ratio;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            j += 1;
        }
        (1.0 - libm::exp(log_pmf(k + 1)) * sum).clamp(0.0, 1.0)
    }
}

/// Smallest `k` with `P(N ≤ k) ≥ q`.
pub fn binomial_ppf(q: f64, n: u64, p: f64) -> u64 {
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial_cdf(mid, n, p) >= q {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Central interval `(ppf((1-level)/2), ppf((1+level)/2))`.
pub fn binomial_ci(n: u64, p: f64, level: f64) -> (u64, u64) {
    (binomial_ppf(0.5 * (1.0 - level), n, p), binomial_ppf(0.5 * (1.0 + level), n, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub direction: usize,
    pub observed: u64,
    pub probability: f64,
    pub expected: f64,
    pub ci_low: u64,
    pub ci_high: u64,
}

impl CellRow {
    pub fn within_ci(&self) -> bool {
        self.ci_low <= self.observed && self.observed <= self.ci_high
    }
}

/// Observed Voronoi-cell counts against the binomial law implied by a model
/// sample. Cells with neither observations nor model mass are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    pub n: u64,
    pub level: f64,
    pub rows: Vec<CellRow>,
}

impl CellTable {
    pub fn fraction_within_ci(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.rows.iter().filter(|r| r.within_ci()).count() as f64 / self.rows.len() as f64
    }
}

pub fn observed_vs_expected(obs_angles: &Matrix, sim_angles: &Matrix, grid: &SphereGrid, level: f64) -> Result<CellTable> {
    if grid.is_empty() || sim_angles.nrows() == 0 {
        return Err(invalid("need a nonempty grid and model sample"));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(invalid("level must lie in [0, 1)"));
    }
    let n = obs_angles.nrows() as u64;
    let mut observed = vec![0u64; grid.len()];
    for j in voronoi_assign(obs_angles, grid) {
        observed[j] += 1;
    }
    let mut simulated = vec![0u64; grid.len()];
    for j in voronoi_assign(sim_angles, grid) {
        simulated[j] += 1;
    }
    let total = sim_angles.nrows() as f64;
    let rows = (0..grid.len())
        .filter(|&j| observed[j] > 0 || simulated[j] > 0)
        .map(|j| {
            let p = simulated[j] as f64 / total;
            let (ci_low, ci_high) = binomial_ci(n, p, level);
            CellRow { direction: j, observed: observed[j], probability: p, expected: n as f64 * p, ci_low, ci_high }
        })
        .collect();
    Ok(CellTable { n, level, rows })
}

/// Every `stride`-th index starting from the first row (zero-based).
pub fn downsample(n: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    Ok((0..n).step_by(stride).collect())
}

/// Sample quantile of sorted data at plotting position `p`, with order
/// statistic `k` (1-based) sitting at `k / (m + 1)`.
fn plotting_quantile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let h = p * (m + 1) as f64;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= m as f64 {
        return sorted[m - 1];
    }
    let lo = libm::floor(h) as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqBin {
    pub direction: usize,
    pub observations: usize,
    /// `(1 - ζ)` quantile of the simulated radii in the bin.
    pub threshold: f64,
    pub levels: Vec<f64>,
    /// Sorted observed exceedance radii.
    pub observed: Vec<f64>,
    /// Simulated exceedance radii at the same levels.
    pub simulated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqResult {
    pub bins: Vec<QqBin>,
    /// `(level, mean observed, mean simulated)` across bins.
    pub aggregate: Vec<(f64, f64, f64)>,
}

/// Angular-bin QQ data of simulated against observed exceedances.
///
/// A bin is the cap of radius `theta_max` around a grid direction; bins with
/// fewer than `min_count` observations, or no exceedances on either side, are
/// skipped. The aggregate curve averages bins on a common level grid sized by
/// the smallest bin.
pub fn qq_bins(obs: &PolarSample, sim: &PolarSample, grid: &SphereGrid, theta_max: f64, min_count: usize, zeta: f64) -> Result<QqResult> {
    if min_count == 0 {
        return Err(invalid("min_count must be at least 1"));
    }
    if !(theta_max > 0.0) || !(zeta > 0.0 && zeta < 1.0) {
        return Err(invalid("need theta_max > 0 and zeta in (0, 1)"));
    }
    let members = |sample: &PolarSample, u: &[f64]| -> Vec<f64> {
        sample.angles.rows().zip(&sample.radii).filter(|(w, _)| angular_distance(w, u) < theta_max).map(|(_, &r)| r).collect()
    };
    let mut bins = Vec::new();
    for (j, u) in grid.directions.rows().enumerate() {
        let obs_r = members(obs, u);
        if obs_r.len() < min_count {
            continue;
        }
        let mut sim_r = members(sim, u);
        if sim_r.is_empty() {
            continue;
        }
        sim_r.sort_by(f64::total_cmp);
        let threshold = sorted_quantile(&sim_r, 1.0 - zeta);
        let mut observed: Vec<f64> = obs_r.iter().copied().filter(|&r| r > threshold).collect();
        let sim_ex: Vec<f64> = sim_r.iter().copied().filter(|&r| r > threshold).collect();
        if observed.is_empty() || sim_ex.is_empty() {
            continue;
        }
        observed.sort_by(f64::total_cmp);
        let m = observed.len();
        let levels: Vec<f64> = (1..=m).map(|k| k as f64 / (m + 1) as f64).collect();
        let simulated = levels.iter().map(|&p| plotting_quantile(&sim_ex, p)).collect();
        bins.push(QqBin { direction: j, observations: obs_r.len(), threshold, levels, observed, simulated });
    }
    let aggregate = match bins.iter().map(|b| b.observed.len()).min() {
        None => Vec::new(),
        Some(m) => (1..=m)
            .map(|k| {
                let p = k as f64 / (m + 1) as f64;
                let (mut o, mut s) = (0.0, 0.0);
                for b in &bins {
                    o += plotting_quantile(&b.observed, p);
                    s += plotting_quantile(&b.simulated, p);
                }
                let c = bins.len() as f64;
                (p, o / c, s / c)
            })
            .collect(),
    };
    Ok(QqResult { bins, aggregate })
}

/// `n` equally spaced values from `lo` to `hi`.
pub fn value_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `log₁₀ P(X > x)` at each grid value for an empirical sample; `-∞` where
/// no value exceeds `x`.
pub fn log10_exceedance(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&x| {
            let above = sorted.len() - sorted.partition_point(|&v| v <= x);
            libm::log10(above as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub value: f64,
    pub obs_log10_exceedance: f64,
    pub obs_log10_non_exceedance: f64,
    pub sim_log10_exceedance: f64,
    pub sim_log10_non_exceedance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub column: usize,
    pub rows: Vec<TailRow>,
}

/// Empirical exceedance and non-exceedance log₁₀-probabilities of each
/// column, for both samples, on a shared grid of `points` values spanning
/// both. Rows where both samples have zero exceedance (or zero
/// non-exceedance) probability are omitted; a single-sample zero is `-∞`.
pub fn marginal_tail_curves(obs: &Matrix, sim: &Matrix, points: usize) -> Result<Vec<TailCurve>> {
    if obs.ncols() != sim.ncols() {
        return Err(crate::Error::DimensionMismatch { expected: obs.ncols(), found: sim.ncols() });
    }
    if obs.nrows() == 0 || sim.nrows() == 0 || points < 2 {
        return Err(invalid("need nonempty samples and at least two grid points"));
    }
    let mut curves = Vec::with_capacity(obs.ncols());
    for c in 0..obs.ncols() {
        let a = obs.column(c);
        let b = sim.column(c);
        let (lo, hi) = a.iter().chain(&b).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let grid = value_grid(lo, hi, points);
        let obs_exc = log10_exceedance(&a, &grid);
        let sim_exc = log10_exceedance(&b, &grid);
        let non = |exc: f64| libm::log10(-libm::expm1(exc * core::f64::consts::LN_10));
        let rows = grid
            .iter()
            .enumerate()
            .map(|(i, &value)| TailRow {
                value,
                obs_log10_exceedance: obs_exc[i],
                obs_log10_non_exceedance: non(obs_exc[i]),
                sim_log10_exceedance: sim_exc[i],
                sim_log10_non_exceedance: non(sim_exc[i]),
            })
            .filter(|r| {
                let dead = f64::NEG_INFINITY;
                !(r.obs_log10_exceedance == dead && r.sim_log10_exceedance == dead)
                    && !(r.obs_log10_non_exceedance == dead && r.sim_log10_non_exceedance == dead)
            })
            .collect();
        curves.push(TailCurve { column: c, rows });
    }
    Ok(curves)
}

/// `2.5%, 25%, 50%, 75%, 97.5%` quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub p025: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p975: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            p025: sorted_quantile(&s, 0.025),
            q1: sorted_quantile(&s, 0.25),
            median: sorted_quantile(&s, 0.5),
            q3: sorted_quantile(&s, 0.75),
            p975: sorted_quantile(&s, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub zeta: f64,
    /// `None` when either fit failed for this `ζ`.
    pub xi: Option<Summary>,
    pub quantile: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTable {
    pub q_level: f64,
    pub rows: Vec<StabilityRow>,
}

/// Threshold and GP fit at a single `ζ`, summarised over the observed angles.
/// The training seed is derived from `config.seed` and `stream`.
pub fn stability_row(data: &PolarSample, zeta: f64, hidden: &[usize], config: &TrainConfig, q_level: f64, stream: u64) -> StabilityRow {
    let fitted = (|| -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg_u = TrainConfig { seed: derive_seed(config.seed, 2 * stream), ..config.clone() };
        let cfg_gp = TrainConfig { seed: derive_seed(config.seed, 2 * stream + 1), ..config.clone() };
        let threshold = fit_threshold(&data.angles, &data.radii, zeta, hidden, &cfg_u)?.model;
        let ex = exceedance_set(&data.angles, &data.radii, &threshold)?;
        let gp = fit_gp(&data.angles.select_rows(&ex.indices), &ex.excesses, hidden, &cfg_gp)?.model;
        let mut eval = RadialEvaluator::new(&threshold, &gp);
        let mut xi = Vec::with_capacity(data.len());
        let mut q = Vec::with_capacity(data.len());
        for w in data.angles.rows() {
            let p = eval.eval(w);
            xi.push(p.xi);
            q.push(exceedance_radius(&p, zeta, q_level));
        }
        Ok((xi, q))
    })();
    match fitted {
        Ok((xi, q)) => StabilityRow { zeta, xi: Some(Summary::of(&xi)), quantile: Some(Summary::of(&q)) },
        Err(_) => StabilityRow { zeta, xi: None, quantile: None },
    }
}

/// Sweep of [`stability_row`] over an ascending `ζ` grid.
pub fn threshold_stability(data: &PolarSample, zeta_grid: &[f64], hidden: &[usize], config: &TrainConfig, q_level: f64) -> Result<StabilityTable> {
    check_stability_args(zeta_grid, q_level)?;
    let rows = zeta_grid.iter().enumerate().map(|(i, &z)| stability_row(data, z, hidden, config, q_level, i as u64)).collect();
    Ok(StabilityTable { q_level, rows })
}

pub fn check_stability_args(zeta_grid: &[f64], q_level: f64) -> Result<()> {
    if zeta_grid.iter().any(|z| !(*z > 0.0 && *z < 1.0)) || zeta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("zeta grid must be strictly ascending within (0, 1)"));
    }
    if zeta_grid.iter().any(|&z| !(q_level > 0.0 && q_level <= z)) {
        return Err(invalid("q_level must lie in (0, min zeta]"));
    }
    Ok(())
}

/// One moving-block bootstrap replicate: `⌈n / block_len⌉` runs of
/// consecutive indices with uniform starts in `0..=n-block_len`, cut to `n`.
pub fn block_bootstrap_replicate<R: Rng + ?Sized>(n: usize, block_len: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let start = rng.random_range(0..=n - block_len);
        let take = block_len.min(n - out.len());
        out.extend(start..start + take);
    }
    out
}

pub fn block_bootstrap(n: usize, block_len: usize, n_boot: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if block_len == 0 || block_len > n {
        return Err(invalid("block length must lie in 1..=n"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n_boot).map(|_| block_bootstrap_replicate(n, block_len, &mut rng)).collect())
}

/// Pointwise `(1 ∓ level)/2` quantile envelopes of equally long curves.
pub fn bootstrap_ci(replicates: &[Vec<f64>], level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if replicates.len() < 2 {
        return Err(invalid("need at least two replicates"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(invalid("level must lie in [0, 1]"));
    }
    let len = replicates[0].len();
    if replicates.iter().any(|r| r.len() != len) {
        return Err(invalid("replicates must have equal length"));
    }
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(replicates.len());
    for i in 0..len {
        column.clear();
        column.extend(replicates.iter().map(|r| r[i]));
        column.sort_by(f64::total_cmp);
        lower.push(sorted_quantile(&column, 0.5 * (1.0 - level)));
        upper.push(sorted_quantile(&column, 0.5 * (1.0 + level)));
    }
    Ok((lower, upper))
}
