//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are fixed here and never loosened at run time.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use spar::config::RunConfig;
use spar::model_file::{self, ModelFile};
use spar_core::angular::{log_spaced, ps_log_density, sample_ps, BandwidthOptions};
use spar_core::diagnostics::{self, binomial_cdf, binomial_ci};
use spar_core::geometry::{sphere_grid, to_polar};
use spar_core::linalg::{dot, norm};
use spar_core::nnet::{backward, forward, MlpArchitecture, MlpParams, TrainConfig};
use spar_core::radial::{fit_threshold, gp_nll, tilted_loss};
use spar_core::random::{derive_seed, rng_from_seed, uniform_sphere, SparRng};
use spar_core::spar::{fit_spar, SparFit, SparModel};
use spar_core::synthetic::{generate, SyntheticSpec};
use spar_core::Matrix;
use statrs::distribution::{Beta, ContinuousCDF};

const GRID_COUNTS: [(usize, usize, u128); 4] = [(3, 5, 102), (5, 5, 1002), (5, 8, 5890), (5, 20, 216_002)];
const GRID_SECONDS: f64 = 10.0;

const NORM_KAPPAS: [f64; 5] = [0.0, 1.0, 10.0, 100.0, 5000.0];
const NORM_POINTS: usize = 1_000_000;
const NORM_TOL: f64 = 0.02;
const UNIFORM_DENSITY_TOL: f64 = 1e-12;
const NORM_SECONDS: f64 = 30.0;

const KS_DIMS: [usize; 3] = [2, 3, 5];
const KS_KAPPAS: [f64; 3] = [1.0, 50.0, 1000.0];
const KS_SAMPLES: usize = 100_000;
const KS_ALPHA: f64 = 0.01;
const KS_SECONDS: f64 = 60.0;

const GRAD_INSTANCES: usize = 100;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_SECONDS: f64 = 60.0;

const REC_DIM: usize = 5;
const REC_N: usize = 50_000;
const REC_ZETA: f64 = 0.1;
const REC_U: f64 = 2.3;
const REC_SIGMA: f64 = 2.0;
const REC_XI: f64 = -0.1;
const REC_TEST_ANGLES: usize = 1000;
const REC_XI_TOL: f64 = 0.05;
const REC_SIGMA_REL_TOL: f64 = 0.1;
const REC_U_REL_TOL: f64 = 0.05;
const REC_SECONDS: f64 = 600.0;

const CAL_ZETAS: [f64; 3] = [0.05, 0.1, 0.2];
const CAL_LEVEL: f64 = 0.99;

const CONTOUR_SIM: usize = 1_000_000;
const CONTOUR_BETA_FRACTIONS: [f64; 3] = [0.5, 0.1, 0.01];
const CONTOUR_LEVEL: f64 = 0.99;

const SELF_SIM_FACTOR: usize = 100;
const SELF_LEVEL: f64 = 0.95;
const SELF_TARGET: f64 = 0.95;
const SELF_SLACK_SIGMAS: f64 = 3.0;

const MASS_REL_TOL: f64 = 0.01;
const MASS_N: usize = 5_000;
const MASS_ANGLES: usize = 512;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grid_counts() -> Outcome {
    let t = Instant::now();
    let mut got = Vec::new();
    let mut ok = true;
    for (d, m, want) in GRID_COUNTS {
        let n = sphere_grid(d, m).map(|g| g.len() as u128).unwrap_or(0);
        ok &= n == want;
        got.push(format!("(d={d}, m={m}) -> {n}"));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < GRID_SECONDS, format!("{} in {secs:.2} s", got.join(", ")))
}

/// Spherical Fibonacci lattice: `n` near-uniform points on `𝕊²`.
fn fibonacci_sphere(n: usize) -> Matrix {
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut m = Matrix::zeros(n, 3);
    for i in 0..n {
        let z = 1.0 - (2 * i + 1) as f64 / n as f64;
        let s = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        m.row_mut(i).copy_from_slice(&[s * phi.cos(), s * phi.sin(), z]);
    }
    m
}

fn ps_normalisation() -> Outcome {
    let t = Instant::now();
    let mu = {
        let v = [0.3, -0.5, 0.8];
        let n = norm(&v);
        v.map(|x| x / n)
    };
    let area = 4.0 * PI;
    let integrate = |pts: &Matrix, kappa: f64| pts.rows().map(|w| ps_log_density(w, &mu, kappa).unwrap().exp()).sum::<f64>() * area / pts.nrows() as f64;
    let random = uniform_sphere(3, NORM_POINTS, &mut rng_from_seed(31));
    let lattice = fibonacci_sphere(NORM_POINTS);
    let mut ok = true;
    let mut parts = Vec::new();
    for &k in &NORM_KAPPAS {
        let lat = integrate(&lattice, k);
        ok &= (lat - 1.0).abs() <= NORM_TOL;
        // Plain Monte Carlo cannot resolve the sharpest kernel with 10⁶
        // points; the lattice rule is the check there.
        if k <= 100.0 {
            let mc = integrate(&random, k);
            ok &= (mc - 1.0).abs() <= NORM_TOL;
            parts.push(format!("κ={k}: mc {mc:.4} lattice {lat:.4}"));
        } else {
            parts.push(format!("κ={k}: lattice {lat:.4}"));
        }
    }
    let u = ps_log_density(&mu, &mu, 0.0).unwrap().exp();
    let du = (u - 1.0 / area).abs();
    ok &= du <= UNIFORM_DENSITY_TOL;
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < NORM_SECONDS, format!("{}; |f₀ − 1/4π| = {du:.1e}; {secs:.1} s", parts.join(", ")))
}

/// Asymptotic Kolmogorov survival function `P(√n D > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn sampling_law() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut worst = (1.0, 0, 0.0);
    for (i, &d) in KS_DIMS.iter().enumerate() {
        for (j, &kappa) in KS_KAPPAS.iter().enumerate() {
            let mut rng = rng_from_seed(derive_seed(57, (10 * i + j) as u64));
            let mu = uniform_sphere(d, 1, &mut rng).row(0).to_vec();
            let s = sample_ps(&mu, kappa, KS_SAMPLES, &mut rng).unwrap();
            let a = (d - 1) as f64 / 2.0 + kappa;
            let b = (d - 1) as f64 / 2.0;
            let law = Beta::new(a, b).unwrap();
            let mut z: Vec<f64> = s.rows().map(|w| (1.0 + dot(w, &mu)) / 2.0).collect();
            z.sort_by(f64::total_cmp);
            let n = z.len() as f64;
            let dmax = z
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let f = law.cdf(v);
                    (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            let p = kolmogorov_sf(dmax * n.sqrt());
            ok &= p > KS_ALPHA;
            if p < worst.0 {
                worst = (p, d, kappa);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < KS_SECONDS, format!("smallest p = {:.3} at (d={}, κ={}); {secs:.1} s", worst.0, worst.1, worst.2))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn backprop_instance(rng: &mut SparRng) -> f64 {
    let input = rng.random_range(2..=6);
    let layers = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..layers).map(|_| rng.random_range(3..=10)).collect();
    let out = rng.random_range(1..=2);
    let arch = MlpArchitecture::new(input, hidden, out).unwrap();
    let mut params = MlpParams::he_init(&arch, rng);
    params.as_mut_slice().iter_mut().for_each(|v| *v += 0.1 * rng.random_range(-1.0..1.0));
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let analytic = backward(&params, &x, &c).unwrap();
    let objective = |p: &MlpParams| dot(&forward(p, &x).unwrap(), &c);
    let h = 1e-6;
    let mut fd = vec![0.0; params.as_slice().len()];
    for (k, g) in fd.iter_mut().enumerate() {
        let mut plus = params.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = params.clone();
        minus.as_mut_slice()[k] -= h;
        *g = (objective(&plus) - objective(&minus)) / (2.0 * h);
    }
    rel_err(analytic.as_slice(), &fd)
}

fn gp_instance(rng: &mut SparRng, i: usize) -> f64 {
    // Every fifth instance sits on the small-shape series branch.
    let xi = if i % 5 == 0 { rng.random_range(-5e-7..5e-7) } else { rng.random_range(-0.45..0.09) };
    let nu = rng.random_range(0.2..5.0);
    let sigma = nu / (1.0 + xi);
    let upper = if xi < 0.0 { 0.9 * sigma / -xi } else { 10.0 * sigma };
    let z = rng.random_range(0.0..upper);
    let (_, dn, dx) = gp_nll(z, nu, xi).unwrap();
    let h = 1e-6;
    let f = |n: f64, x: f64| gp_nll(z, n, x).unwrap().0;
    let fd_n = (f(nu + h * nu, xi) - f(nu - h * nu, xi)) / (2.0 * h * nu);
    // Step in ξ scaled so that t = ξ z / σ moves by at most 1e-6.
    let hx = h / (z / sigma).max(1.0);
    let fd_x = (f(nu, xi + hx) - f(nu, xi - hx)) / (2.0 * hx);
    rel_err(&[dn, dx], &[fd_n, fd_x])
}

fn tilted_instance(rng: &mut SparRng) -> f64 {
    let zeta = rng.random_range(0.01..0.5);
    let u: f64 = rng.random_range(0.1..5.0);
    // Keep the residual away from the kink by more than the step.
    let r = loop {
        let r: f64 = rng.random_range(0.0..10.0);
        if (r - u).abs() > 1e-3 {
            break r;
        }
    };
    let (_, g) = tilted_loss(r, u, zeta);
    let h = 1e-6;
    let fd = (tilted_loss(r, u + h, zeta).0 - tilted_loss(r, u - h, zeta).0) / (2.0 * h);
    rel_err(&[g], &[fd])
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_from_seed(71);
    let bp = (0..GRAD_INSTANCES).map(|_| backprop_instance(&mut rng)).fold(0.0, f64::max);
    let gp = (0..GRAD_INSTANCES).map(|i| gp_instance(&mut rng, i)).fold(0.0, f64::max);
    let tl = (0..GRAD_INSTANCES).map(|_| tilted_instance(&mut rng)).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let ok = bp < GRAD_REL_TOL && gp < GRAD_REL_TOL && tl < GRAD_REL_TOL && secs < GRAD_SECONDS;
    outcome(ok, format!("max relative error: backprop {bp:.1e}, GP NLL {gp:.1e}, tilted loss {tl:.1e} over {GRAD_INSTANCES} instances each; {secs:.1} s"))
}

fn default_fit(data: &Matrix) -> SparFit {
    let cfg = RunConfig::default();
    fit_spar(data, REC_ZETA, &cfg.bandwidth_options(), &cfg.model.hidden, &cfg.train_config(), None).expect("fit succeeds")
}

fn stationary_recovery(fit: &SparFit, secs: f64) -> Outcome {
    let angles = uniform_sphere(REC_DIM, REC_TEST_ANGLES, &mut rng_from_seed(5));
    let mut dxi = Vec::new();
    let mut dsig = Vec::new();
    let mut du = Vec::new();
    for w in angles.rows() {
        let p = fit.model.radial(w);
        dxi.push((p.xi - REC_XI).abs());
        dsig.push((p.sigma - REC_SIGMA).abs() / REC_SIGMA);
        du.push((p.u - REC_U).abs() / REC_U);
    }
    let (mx, ms, mu) = (median(dxi), median(dsig), median(du));
    let ok = mx < REC_XI_TOL && ms < REC_SIGMA_REL_TOL && mu < REC_U_REL_TOL && secs < REC_SECONDS;
    outcome(ok, format!("median |ξ̂+0.1| = {mx:.4}, median |σ̂−2|/2 = {ms:.4}, median |û−2.3|/2.3 = {mu:.4}; fit {secs:.0} s"))
}

fn threshold_calibration(data: &Matrix) -> Outcome {
    let polar = to_polar(data).unwrap();
    let cfg = RunConfig::default();
    let n = polar.len() as u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &zeta) in CAL_ZETAS.iter().enumerate() {
        let train = TrainConfig { seed: derive_seed(cfg.seed, 40 + i as u64), ..cfg.train_config() };
        let fit = fit_threshold(&polar.angles, &polar.radii, zeta, &cfg.model.hidden, &train).unwrap();
        let (lo, hi) = binomial_ci(n, zeta, CAL_LEVEL);
        let (lo, hi) = (lo as f64 / n as f64, hi as f64 / n as f64);
        let f = fit.exceedance_fraction;
        ok &= lo <= f && f <= hi;
        parts.push(format!("ζ={zeta}: {f:.4} in [{lo:.4}, {hi:.4}]"));
    }
    outcome(ok, parts.join(", "))
}

fn contour_consistency(model: &SparModel) -> Outcome {
    let sim = model.simulate(CONTOUR_SIM, &mut rng_from_seed(91));
    let polar = to_polar(&sim).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for &frac in &CONTOUR_BETA_FRACTIONS {
        let beta = frac * model.zeta;
        let above = polar.angles.rows().zip(&polar.radii).filter(|(w, &r)| r > model.contour_radius(w, beta).unwrap()).count() as u64;
        let (lo, hi) = binomial_ci(CONTOUR_SIM as u64, beta, CONTOUR_LEVEL);
        ok &= lo <= above && above <= hi;
        parts.push(format!("β={beta}: {above} in [{lo}, {hi}]"));
    }
    outcome(ok, parts.join(", "))
}

fn diagnostic_self_consistency(model: &SparModel, n: usize) -> Outcome {
    let obs = model.simulate(n, &mut rng_from_seed(101));
    let sim = model.simulate(SELF_SIM_FACTOR * n, &mut rng_from_seed(102));
    let grid = sphere_grid(model.dim(), 5).unwrap();
    let ow = to_polar(&obs).unwrap().angles;
    let sw = to_polar(&sim).unwrap().angles;
    let table = diagnostics::observed_vs_expected(&ow, &sw, &grid, SELF_LEVEL).unwrap();
    let cells = table.rows.len() as f64;
    let frac = table.fraction_within_ci();
    let floor = SELF_TARGET - SELF_SLACK_SIGMAS * (SELF_TARGET * (1.0 - SELF_TARGET) / cells).sqrt();
    let cdf = binomial_cdf(1, 2, 0.5);
    let ok = frac >= floor && cdf == 0.75;
    outcome(ok, format!("{frac:.4} of {cells} occupied cells inside the CI (floor {floor:.4}); binomial_cdf(1, 2, 0.5) = {cdf}"))
}

/// `∫ g(r) dr` over `[a, ∞)` by composite Simpson on panels of doubling
/// width, stopping once a panel adds less than `1e-15` of the total.
fn tail_integral(g: impl Fn(f64) -> f64, a: f64, step: f64, end: f64) -> f64 {
    let simpson = |lo: f64, hi: f64| {
        let k = 32;
        let h = (hi - lo) / k as f64;
        let s: f64 = (0..=k)
            .map(|i| {
                let w = if i == 0 || i == k {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * g(lo + i as f64 * h)
            })
            .sum();
        s * h / 3.0
    };
    let mut total = 0.0;
    let mut lo = a;
    let mut width = step;
    loop {
        let hi = (lo + width).min(end);
        let part = simpson(lo, hi);
        total += part;
        if hi >= end || (part.abs() < 1e-15 * total.abs() && total > 0.0) {
            return total;
        }
        lo = hi;
        width *= 2.0;
    }
}

fn mass_2d() -> Outcome {
    let spec = SyntheticSpec { threshold_modulation: 0.3, sigma_modulation: 0.4, ..SyntheticSpec::stationary(2, REC_ZETA, 2.0, 1.0, -0.1) };
    let data = generate(&spec, MASS_N, &mut rng_from_seed(17)).unwrap().data;
    let cfg = RunConfig::default();
    let opts = BandwidthOptions { m_pred: 1000, ..cfg.bandwidth_options() };
    let model = fit_spar(&data, REC_ZETA, &opts, &cfg.model.hidden, &cfg.train_config(), None).unwrap().model;
    // Periodic trapezoid rule in the angle, panels in the radius.
    let n_theta = MASS_ANGLES;
    let mut mass = 0.0;
    for i in 0..n_theta {
        let th = 2.0 * PI * i as f64 / n_theta as f64;
        let w = [th.cos(), th.sin()];
        let p = model.radial(&w);
        let end = if p.xi < 0.0 { p.u + p.sigma / -p.xi } else { f64::INFINITY };
        let g = |r: f64| {
            if r <= p.u || r >= end {
                return 0.0;
            }
            model.log_joint_density(&[r * w[0], r * w[1]]).map(|l| l.exp() * r).unwrap_or(0.0)
        };
        mass += tail_integral(g, p.u, 0.05 * p.sigma, end);
    }
    mass *= 2.0 * PI / n_theta as f64;
    let rel = (mass - REC_ZETA).abs() / REC_ZETA;
    outcome(rel <= MASS_REL_TOL, format!("mass above threshold {mass:.6} (relative error {rel:.2e})"))
}

fn serialization(model: &SparModel) -> Outcome {
    let file = ModelFile { model: model.clone(), n_observations: REC_N };
    let bytes = model_file::to_bytes(&file).unwrap();
    let back = model_file::from_bytes(&bytes).unwrap().model;
    let probes = uniform_sphere(REC_DIM, 200, &mut rng_from_seed(3));
    let density_ok = probes.rows().all(|w| {
        let x: Vec<f64> = w.iter().map(|v| v * 1.2 * model.radial(w).u).collect();
        model.log_joint_density(&x).unwrap().to_bits() == back.log_joint_density(&x).unwrap().to_bits()
    });
    let grid = sphere_grid(REC_DIM, 5).unwrap();
    let contour_ok = model.contour_cloud(&grid, 0.001).unwrap() == back.contour_cloud(&grid, 0.001).unwrap();
    let sim_ok = model.simulate(20_000, &mut rng_from_seed(4)) == back.simulate(20_000, &mut rng_from_seed(4));
    let resave_ok = model_file::to_bytes(&ModelFile { model: back, n_observations: REC_N }).unwrap() == bytes;
    outcome(
        density_ok && contour_ok && sim_ok && resave_ok,
        format!("density {density_ok}, contour {contour_ok}, simulation {sim_ok}, re-save {resave_ok} ({} bytes)", bytes.len()),
    )
}

fn defaults() -> Outcome {
    let cfg = RunConfig::default();
    let mut bad = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    let zetas: Vec<f64> = (1..=20).map(|k| k as f64 * 0.0125).collect();
    check("zeta grid", cfg.zeta_grid() == zetas);
    let kappas: Vec<f64> = (0..50).map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 49.0)).collect();
    let grid = cfg.bandwidth_options().kappa_grid;
    check("kappa grid", grid.len() == 50 && grid.iter().zip(&kappas).all(|(a, b)| ((a - b) / b).abs() < 1e-13));
    check("kappa grid endpoints", grid[0] == 10.0 && grid[49] == 1e4);
    check("m_pred", cfg.bandwidth.m_pred == 1000);
    check("k_exclude", cfg.bandwidth.k_exclude == 48);
    check("theta_max", cfg.diagnostics.theta_max_deg == 15.0);
    check("min_count", cfg.diagnostics.min_count == 200);
    check("bootstrap replicates", cfg.diagnostics.bootstrap_replicates == 200);
    check("block length (4 days hourly)", cfg.diagnostics.block_length == 4 * 24);
    check("quantile level", cfg.stability.q_level == 1e-6);
    check("steepness cap", cfg.data.steepness_cap == 0.1);
    check("architecture", cfg.model.hidden == [16, 16, 16]);
    check("log_spaced", log_spaced(10.0, 1e4, 50) == grid);
    let golden = include_str!("golden/default_config.toml");
    check("config dump matches golden file", cfg.to_toml() == golden);
    let detail = if bad.is_empty() { "all shipped defaults match".to_string() } else { format!("mismatched: {}", bad.join(", ")) };
    outcome(bad.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("sphere-grid-counts", grid_counts());
    report("power-spherical-normalisation", ps_normalisation());
    report("power-spherical-sampling-law", sampling_law());
    report("gradient-suites", gradients());

    let spec = SyntheticSpec::stationary(REC_DIM, REC_ZETA, REC_U, REC_SIGMA, REC_XI);
    let data = generate(&spec, REC_N, &mut rng_from_seed(2024)).unwrap().data;
    let t = Instant::now();
    let fit = default_fit(&data);
    let fit_secs = t.elapsed().as_secs_f64();
    report("stationary-recovery", stationary_recovery(&fit, fit_secs));
    report("threshold-calibration", threshold_calibration(&data));
    report("simulation-contour-consistency", contour_consistency(&fit.model));
    report("diagnostic-self-consistency", diagnostic_self_consistency(&fit.model, REC_N));
    report("mass-2d", mass_2d());
    report("serialization", serialization(&fit.model));
    report("defaults", defaults());

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
