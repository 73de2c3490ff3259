//! One function per CLI subcommand. Each returns the files it wrote.
//!
//! Seeds: the model fit uses `seed` directly (with its own derived streams),
//! diagnostic simulation uses stream 200, the bootstrap schedule stream 300
//! and bootstrap replicate `b` stream `1000 + b`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use spar_core::angular::optimize_bandwidth;
use spar_core::diagnostics::{self, StabilityRow, Summary};
use spar_core::geometry::{sphere_grid, to_polar};
use spar_core::nnet::TrainOutcome;
use spar_core::preprocess::{PreprocessSpec, DEFAULT_STEEPNESS_CAP};
use spar_core::random::{derive_seed, rng_from_seed};
use spar_core::spar::{fit_spar, SparModel};
use spar_core::synthetic::{generate, SyntheticSpec};
use spar_core::Matrix;

use crate::config::RunConfig;
use crate::dataset;
use crate::error::{AppError, Result};
use crate::io::{sha256_hex, CsvSink, OutTable, Provenance};
use crate::model_file::{self, ModelFile};

pub const MODEL_FILE: &str = "model.spar";
/// Default simulated sample size, as a multiple of the fitted sample.
pub const SIMULATION_FACTOR: usize = 100;

const DIAGNOSE_SIM_STREAM: u64 = 200;
const BOOTSTRAP_SCHEDULE_STREAM: u64 = 300;
const BOOTSTRAP_FIT_STREAM: u64 = 1000;
/// Rows converted to physical units per batch while streaming a simulation.
const SIM_CHUNK: usize = 1 << 16;

fn provenance(command: &str, cfg: &RunConfig) -> Provenance {
    Provenance::new(command).seed(cfg.seed).config(&cfg.to_toml())
}

fn model_provenance(command: &str, seed: Option<u64>, model_path: &Path) -> Result<Provenance> {
    let bytes = std::fs::read(model_path).map_err(|e| AppError::io(model_path, e))?;
    let prov = Provenance::new(command);
    let prov = match seed {
        Some(s) => prov.seed(s),
        None => prov,
    };
    Ok(prov.param("model_sha256", sha256_hex(&bytes)))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn hidden_widths(model: &SparModel) -> Vec<usize> {
    model.threshold.arch.hidden.clone()
}

/// Fits a model and writes it with its bandwidth curve, training history
/// and a one-row summary.
pub fn cmd_fit(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ds = dataset::load(cfg)?;
    log::info!("fit: {} rows ({} dropped)", ds.normalized.nrows(), ds.report.dropped_rows);
    let fit = fit_spar(&ds.normalized, cfg.model.zeta, &cfg.bandwidth_options(), &cfg.model.hidden, &cfg.train_config(), Some(ds.spec.clone()))?;
    let prov = provenance("fit", cfg);

    let model_path = out_dir.join(MODEL_FILE);
    model_file::save(&ModelFile { model: fit.model.clone(), n_observations: ds.normalized.nrows() }, &model_path)?;

    let bw_path = out_dir.join("bandwidth.csv");
    bandwidth_table(&fit.bandwidth).write(&bw_path, &prov)?;

    let tr_path = out_dir.join("training.csv");
    let mut tr = OutTable::new(&["network", "epoch", "train_loss", "validation_loss", "learning_rate"]);
    for (net, outcome) in [(0.0, &fit.threshold.training), (1.0, &fit.gp.training)] {
        for e in &outcome.history {
            tr.push_f64(&[net, e.epoch as f64, e.train_loss, e.validation_loss, e.learning_rate]);
        }
    }
    tr.write(&tr_path, &prov.clone().param("network", "0 = threshold, 1 = gp"))?;

    let rs_path = out_dir.join("restarts.csv");
    let mut rs = OutTable::new(&["network", "epoch", "batch", "learning_rate_before", "learning_rate_after", "restored_step"]);
    for (net, outcome) in [(0.0, &fit.threshold.training), (1.0, &fit.gp.training)] {
        for r in &outcome.restarts {
            rs.push_f64(&[net, r.epoch as f64, r.batch as f64, r.learning_rate_before, r.learning_rate_after, r.restored_step as f64]);
        }
    }
    rs.write(&rs_path, &prov.clone().param("network", "0 = threshold, 1 = gp"))?;

    let sm_path = out_dir.join("fit_summary.csv");
    let mut sm = OutTable::new(&[
        "rows_read",
        "nan_cells",
        "dropped_rows",
        "n",
        "zeta",
        "kappa",
        "exceedance_fraction",
        "band_low",
        "band_high",
        "threshold_degraded",
        "threshold_best_epoch",
        "threshold_restarts",
        "gp_degraded",
        "gp_best_epoch",
        "gp_restarts",
        "n_exceedances",
    ]);
    let summary = |o: &TrainOutcome| [o.best_epoch as f64, o.restarts.len() as f64];
    let [te, tr_n] = summary(&fit.threshold.training);
    let [ge, gr_n] = summary(&fit.gp.training);
    sm.push_f64(&[
        ds.report.rows as f64,
        ds.report.nan_cells as f64,
        ds.report.dropped_rows as f64,
        ds.normalized.nrows() as f64,
        cfg.model.zeta,
        fit.model.kde.kappa(),
        fit.threshold.exceedance_fraction,
        fit.threshold.band.0,
        fit.threshold.band.1,
        flag(fit.threshold.degraded),
        te,
        tr_n,
        flag(fit.gp.training.degraded),
        ge,
        gr_n,
        (ds.normalized.nrows() - fit.model.body_pool.nrows()) as f64,
    ]);
    sm.write(&sm_path, &prov)?;
    if fit.threshold.degraded {
        log::warn!("threshold exceedance fraction {} lies outside the 99% band", fit.threshold.exceedance_fraction);
    }
    Ok(vec![model_path, bw_path, tr_path, rs_path, sm_path])
}

fn bandwidth_table(curve: &spar_core::angular::BandwidthCurve) -> OutTable {
    let mut t = OutTable::new(&["kappa", "nll", "selected"]);
    for (i, (&k, &l)) in curve.kappa.iter().zip(&curve.nll).enumerate() {
        t.push_f64(&[k, l, flag(i == curve.best)]);
    }
    t
}

/// Predictive NLL over the configured bandwidth grid.
pub fn cmd_bandwidth(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ds = dataset::load(cfg)?;
    let polar = to_polar(&ds.normalized)?;
    let mut opts = cfg.bandwidth_options();
    opts.m_pred = opts.m_pred.min(polar.len());
    let curve = optimize_bandwidth(&polar.angles, &opts)?;
    let path = out_dir.join("bandwidth.csv");
    bandwidth_table(&curve).write(&path, &provenance("bandwidth", cfg).param("kappa_star", curve.kappa_star()))?;
    Ok(vec![path])
}

/// Threshold-stability sweep over the configured `ζ` grid, one fit per
/// grid value in parallel.
pub fn cmd_stability(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ds = dataset::load(cfg)?;
    let polar = to_polar(&ds.normalized)?;
    let grid = cfg.zeta_grid();
    let q = cfg.stability.q_level;
    diagnostics::check_stability_args(&grid, q)?;
    let train = cfg.train_config();
    let rows: Vec<StabilityRow> =
        grid.par_iter().enumerate().map(|(i, &z)| diagnostics::stability_row(&polar, z, &cfg.model.hidden, &train, q, i as u64)).collect();
    let mut t = OutTable::new(&[
        "zeta",
        "fitted",
        "xi_p025",
        "xi_q1",
        "xi_median",
        "xi_q3",
        "xi_p975",
        "quantile_p025",
        "quantile_q1",
        "quantile_median",
        "quantile_q3",
        "quantile_p975",
    ]);
    let cells = |s: Option<Summary>| match s {
        Some(s) => [s.p025, s.q1, s.median, s.q3, s.p975],
        None => [f64::NAN; 5],
    };
    for r in &rows {
        let mut row = vec![r.zeta, flag(r.xi.is_some())];
        row.extend(cells(r.xi));
        row.extend(cells(r.quantile));
        t.push_f64(&row);
    }
    let path = out_dir.join("stability.csv");
    t.write(&path, &provenance("stability", cfg).param("q_level", q))?;
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub model: PathBuf,
    /// Defaults to [`SIMULATION_FACTOR`] times the fitted sample size.
    pub n: Option<usize>,
    pub seed: u64,
    pub steepness_cap: Option<f64>,
}

/// Simulates from a model and writes the sample in physical units. Metocean
/// samples are steepness-filtered after simulation.
pub fn cmd_simulate(args: &SimulateArgs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mf = model_file::load(&args.model)?;
    let n = args.n.unwrap_or(SIMULATION_FACTOR * mf.n_observations);
    let cap = args.steepness_cap.unwrap_or(DEFAULT_STEEPNESS_CAP);
    let model = &mf.model;
    let spec = model.preprocess.as_ref();
    let sim = model.simulate(n, &mut rng_from_seed(args.seed));

    let (names, _) = dataset::to_physical(&Matrix::with_cols(model.dim()), spec)?;
    let (sim, removed) = dataset::steepness_filter(&sim, spec, cap)?;
    let kept = sim.nrows();
    let mut prov = model_provenance("simulate", Some(args.seed), &args.model)?.param("n", n);
    if spec.is_some_and(|s| s.metocean) {
        prov = prov.param("steepness_cap", cap).param("removed_fraction", removed);
    }
    let path = out_dir.join("simulation.csv");
    let mut sink = CsvSink::create(&path, &prov.param("rows_written", kept), &names)?;
    for start in (0..kept).step_by(SIM_CHUNK) {
        let idx: Vec<usize> = (start..(start + SIM_CHUNK).min(kept)).collect();
        let (_, phys) = dataset::to_physical(&sim.select_rows(&idx), spec)?;
        for row in phys.rows() {
            sink.write_f64(row)?;
        }
    }
    sink.finish()?;
    log::info!("simulate: {kept} of {n} rows written");
    Ok(vec![path])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourArgs {
    pub model: PathBuf,
    pub beta: f64,
    pub grid_m: usize,
}

/// `β`-exceedance contour over a pseudo-regular direction grid, with the
/// angular density of each direction for masking.
pub fn cmd_contour(args: &ContourArgs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mf = model_file::load(&args.model)?;
    let model = &mf.model;
    let d = model.dim();
    let grid = sphere_grid(d, args.grid_m)?;
    let cloud = model.contour_cloud(&grid, args.beta)?;
    let mut coords = Matrix::with_cols(d);
    for row in cloud.rows() {
        coords.push_row(&row[..d]);
    }
    let spec = model.preprocess.as_ref();
    let mut header: Vec<String> = (1..=d).map(|j| format!("X{j}")).collect();
    let physical = match spec {
        Some(_) => {
            let (names, phys) = dataset::to_physical(&coords, spec)?;
            header.extend(names);
            Some(phys)
        }
        None => None,
    };
    header.push("angular_density".into());
    let mut t = OutTable::new(&header);
    for (i, row) in cloud.rows().enumerate() {
        let mut cells = row[..d].to_vec();
        if let Some(p) = &physical {
            cells.extend_from_slice(p.row(i));
        }
        cells.push(row[d]);
        t.push_f64(&cells);
    }
    let path = out_dir.join("contour.csv");
    let prov = model_provenance("contour", None, &args.model)?.param("beta", args.beta).param("grid_m", args.grid_m);
    t.write(&path, &prov)?;
    Ok(vec![path])
}

/// Observations in the model's normalised coordinates.
fn observations(cfg: &RunConfig, spec: Option<&PreprocessSpec>) -> Result<Matrix> {
    match spec {
        Some(s) => Ok(dataset::load_with_spec(cfg, s)?.normalized),
        None => Ok(crate::io::read_columns(&cfg.data.path, &cfg.data.columns)?.0.data),
    }
}

/// Writes every diagnostic table for a fitted model against the configured
/// data. `bootstrap` adds block-bootstrap envelopes of the simulated
/// marginal tails, refitting the model once per replicate.
pub fn cmd_diagnose(model_path: &Path, cfg: &RunConfig, bootstrap: bool, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mf = model_file::load(model_path)?;
    let model = &mf.model;
    let spec = model.preprocess.as_ref();
    let dc = &cfg.diagnostics;
    let obs = observations(cfg, spec)?;
    if obs.ncols() != model.dim() {
        return Err(AppError::Usage(format!("data has {} columns but the model has dimension {}", obs.ncols(), model.dim())));
    }
    let n = obs.nrows();
    let n_sim = dc.sim_factor * n;
    let sim = model.simulate(n_sim, &mut rng_from_seed(derive_seed(cfg.seed, DIAGNOSE_SIM_STREAM)));
    let obs_p = to_polar(&obs)?;
    let sim_p = to_polar(&sim)?;
    let grid = sphere_grid(model.dim(), dc.grid_m)?;
    let prov = provenance("diagnose", cfg)
        .param("model_sha256", sha256_hex(&std::fs::read(model_path).map_err(|e| AppError::io(model_path, e))?))
        .param("n_obs", n)
        .param("n_sim", n_sim);
    let mut written = Vec::new();

    // Raw cell counts around each grid direction.
    let theta = cfg.theta_max();
    let oc = diagnostics::cell_counts(&obs_p.angles, &grid, theta)?;
    let sc = diagnostics::cell_counts(&sim_p.angles, &grid, theta)?;
    let mut header: Vec<String> = (1..=model.dim()).map(|j| format!("w{j}")).collect();
    header.splice(0..0, ["direction".to_string()]);
    header.extend(["observed", "simulated", "simulated_scaled"].map(String::from));
    let mut t = OutTable::new(&header);
    for (j, w) in grid.directions.rows().enumerate() {
        let mut row = vec![j as f64];
        row.extend_from_slice(w);
        row.extend([oc[j] as f64, sc[j] as f64, sc[j] as f64 * n as f64 / n_sim as f64]);
        t.push_f64(&row);
    }
    let p = out_dir.join("cell_counts.csv");
    t.write(&p, &prov.clone().param("theta_max_deg", dc.theta_max_deg).param("grid_m", dc.grid_m))?;
    written.push(p);

    // Voronoi counts of a decorrelated subsample against binomial bounds.
    let idx = diagnostics::downsample(n, dc.stride)?;
    let table = diagnostics::observed_vs_expected(&obs_p.angles.select_rows(&idx), &sim_p.angles, &grid, dc.confidence)?;
    let mut t = OutTable::new(&["direction", "observed", "probability", "expected", "ci_low", "ci_high", "within_ci"]);
    for r in &table.rows {
        t.push_f64(&[r.direction as f64, r.observed as f64, r.probability, r.expected, r.ci_low as f64, r.ci_high as f64, flag(r.within_ci())]);
    }
    let p = out_dir.join("voronoi.csv");
    t.write(&p, &prov.clone().param("stride", dc.stride).param("confidence", dc.confidence).param("fraction_within_ci", table.fraction_within_ci()))?;
    written.push(p);

    // Radial QQ data per angular bin.
    let qq = diagnostics::qq_bins(&obs_p, &sim_p, &grid, theta, dc.min_count, model.zeta)?;
    let mut t = OutTable::new(&["direction", "observations", "threshold", "level", "observed", "simulated"]);
    for b in &qq.bins {
        for k in 0..b.levels.len() {
            t.push_f64(&[b.direction as f64, b.observations as f64, b.threshold, b.levels[k], b.observed[k], b.simulated[k]]);
        }
    }
    let qprov = prov.clone().param("min_count", dc.min_count).param("zeta", model.zeta);
    let p = out_dir.join("qq_bins.csv");
    t.write(&p, &qprov)?;
    written.push(p);
    let mut t = OutTable::new(&["level", "observed", "simulated"]);
    for &(l, o, s) in &qq.aggregate {
        t.push_f64(&[l, o, s]);
    }
    let p = out_dir.join("qq_aggregate.csv");
    t.write(&p, &qprov)?;
    written.push(p);

    // Marginal tail curves.
    let cap = cfg.data.steepness_cap;
    let (names, obs_vars) = dataset::marginal_variables(&obs, spec)?;
    let (sim_f, removed) = dataset::steepness_filter(&sim, spec, cap)?;
    let (_, sim_vars) = dataset::marginal_variables(&sim_f, spec)?;
    let curves = diagnostics::marginal_tail_curves(&obs_vars, &sim_vars, dc.tail_grid_points)?;
    let mut t = OutTable::new(&["variable", "value", "obs_log10_exceedance", "obs_log10_non_exceedance", "sim_log10_exceedance", "sim_log10_non_exceedance"]);
    for c in &curves {
        for r in &c.rows {
            t.push_f64(&[c.column as f64, r.value, r.obs_log10_exceedance, r.obs_log10_non_exceedance, r.sim_log10_exceedance, r.sim_log10_non_exceedance]);
        }
    }
    let mut tprov = prov.clone().param("variables", names.join(" "));
    if spec.is_some_and(|s| s.metocean) {
        tprov = tprov.param("steepness_cap", cap).param("steepness_removed_fraction", removed);
    }
    let p = out_dir.join("marginal_tails.csv");
    t.write(&p, &tprov)?;
    written.push(p);

    if bootstrap {
        let grids: Vec<Vec<f64>> = curves.iter().map(|c| c.rows.iter().map(|r| r.value).collect()).collect();
        let p = out_dir.join("marginal_tails_ci.csv");
        bootstrap_tails(cfg, model, &obs, &grids, &p, tprov)?;
        written.push(p);
    }
    Ok(written)
}

fn log10_non_exceedance(exc: f64) -> f64 {
    (-(exc * std::f64::consts::LN_10).exp_m1()).log10()
}

/// Per variable: exceedance then non-exceedance log-probability curves.
type ReplicateCurves = Vec<(Vec<f64>, Vec<f64>)>;

/// Refits the model on each block-bootstrap replicate of the observations and
/// writes pointwise envelopes of the simulated marginal tail curves.
fn bootstrap_tails(cfg: &RunConfig, model: &SparModel, obs: &Matrix, grids: &[Vec<f64>], path: &Path, prov: Provenance) -> Result<()> {
    let dc = &cfg.diagnostics;
    let n = obs.nrows();
    let schedule = diagnostics::block_bootstrap(n, dc.block_length, dc.bootstrap_replicates, derive_seed(cfg.seed, BOOTSTRAP_SCHEDULE_STREAM))?;
    let spec = model.preprocess.clone();
    let hidden = hidden_widths(model);
    let curves: Vec<Option<ReplicateCurves>> = schedule
        .par_iter()
        .enumerate()
        .map(|(b, idx)| {
            let seed = derive_seed(cfg.seed, BOOTSTRAP_FIT_STREAM + b as u64);
            let data = obs.select_rows(idx);
            let mut opts = cfg.bandwidth_options();
            opts.seed = derive_seed(seed, 100);
            let train = spar_core::nnet::TrainConfig { seed, ..cfg.train_config() };
            let fit = fit_spar(&data, model.zeta, &opts, &hidden, &train, spec.clone()).ok()?;
            let sim = fit.model.simulate(dc.sim_factor * n, &mut rng_from_seed(derive_seed(seed, DIAGNOSE_SIM_STREAM)));
            let (sim, _) = dataset::steepness_filter(&sim, spec.as_ref(), cfg.data.steepness_cap).ok()?;
            let (_, vars) = dataset::marginal_variables(&sim, spec.as_ref()).ok()?;
            Some(
                grids
                    .iter()
                    .enumerate()
                    .map(|(c, g)| {
                        let exc = diagnostics::log10_exceedance(&vars.column(c), g);
                        let non = exc.iter().map(|&e| log10_non_exceedance(e)).collect();
                        (exc, non)
                    })
                    .collect(),
            )
        })
        .collect();
    let ok: Vec<&ReplicateCurves> = curves.iter().flatten().collect();
    log::info!("bootstrap: {} of {} refits succeeded", ok.len(), curves.len());
    let mut t = OutTable::new(&[
        "variable",
        "value",
        "sim_log10_exceedance_low",
        "sim_log10_exceedance_high",
        "sim_log10_non_exceedance_low",
        "sim_log10_non_exceedance_high",
    ]);
    for (c, g) in grids.iter().enumerate() {
        let exc: Vec<Vec<f64>> = ok.iter().map(|r| r[c].0.clone()).collect();
        let non: Vec<Vec<f64>> = ok.iter().map(|r| r[c].1.clone()).collect();
        let (el, eh) = diagnostics::bootstrap_ci(&exc, dc.confidence)?;
        let (nl, nh) = diagnostics::bootstrap_ci(&non, dc.confidence)?;
        for (i, &v) in g.iter().enumerate() {
            t.push_f64(&[c as f64, v, el[i], eh[i], nl[i], nh[i]]);
        }
    }
    let prov = prov
        .param("bootstrap_replicates", dc.bootstrap_replicates)
        .param("bootstrap_refits_ok", ok.len())
        .param("block_length", dc.block_length)
        .param("confidence", dc.confidence);
    t.write(path, &prov)
}

/// Writes the full default configuration. Refuses to overwrite.
pub fn cmd_config_init(cfg: &RunConfig, path: &Path) -> Result<Vec<PathBuf>> {
    if path.exists() {
        return Err(AppError::Usage(format!("{} already exists", path.display())));
    }
    crate::io::atomic_write(path, cfg.to_toml().as_bytes())?;
    Ok(vec![path.to_path_buf()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub spec: SyntheticSpec,
    pub n: usize,
    pub seed: u64,
    pub file_name: String,
}

/// Synthetic sample with columns `x1…xd` and a 0/1 `tail` flag.
pub fn cmd_synth(args: &SynthArgs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let s = generate(&args.spec, args.n, &mut rng_from_seed(args.seed))?;
    let d = args.spec.dim;
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("tail".into());
    let sp = &args.spec;
    let prov = Provenance::new("synth")
        .seed(args.seed)
        .param("zeta", sp.zeta)
        .param("threshold", sp.threshold)
        .param("threshold_modulation", sp.threshold_modulation)
        .param("sigma", sp.sigma)
        .param("sigma_modulation", sp.sigma_modulation)
        .param("xi", sp.xi);
    let path = out_dir.join(&args.file_name);
    let mut sink = CsvSink::create(&path, &prov, &header)?;
    let mut row = vec![0.0; d + 1];
    for (x, &t) in s.data.rows().zip(&s.tail) {
        row[..d].copy_from_slice(x);
        row[d] = flag(t);
        sink.write_f64(&row)?;
    }
    sink.finish()?;
    Ok(vec![path])
}
