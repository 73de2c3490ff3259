//! Run configuration, read from and dumped to TOML.
//!
//! Every field has a default, so a config file only needs to name what it
//! changes. `spar config init` writes the full default set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spar_core::angular::{log_spaced, BandwidthOptions};
use spar_core::diagnostics;
use spar_core::nnet::TrainConfig;
use spar_core::preprocess::{Role, DEFAULT_STEEPNESS_CAP, RAW_COLUMNS};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub bandwidth: BandwidthConfig,
    pub training: TrainingConfig,
    pub stability: StabilityConfig,
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// Columns `H_s, T_m, θ_wave, U_10, θ_wind` mapped to directional
    /// components and log period.
    Metocean,
    /// Columns used as they are.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub kind: DataKind,
    /// CSV header names, in the order the model sees them. For metocean data
    /// these bind `H_s, T_m, theta_wave, U_10, theta_wind`.
    pub columns: Vec<String>,
    /// Generic data only: `component` keeps the origin at zero, `log` and
    /// `plain` centre at the mean. Empty means all `component`.
    pub roles: Vec<String>,
    pub steepness_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub zeta: f64,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthConfig {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_count: usize,
    pub m_pred: usize,
    pub k_exclude: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub restart_shrink: f64,
    pub max_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub zeta_step: f64,
    pub q_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub theta_max_deg: f64,
    pub grid_m: usize,
    pub min_count: usize,
    pub stride: usize,
    pub sim_factor: usize,
    pub confidence: f64,
    pub tail_grid_points: usize,
    pub bootstrap_replicates: usize,
    pub block_length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data.csv"),
            kind: DataKind::Metocean,
            columns: RAW_COLUMNS.iter().map(|s| s.to_string()).collect(),
            roles: Vec::new(),
            steepness_cap: DEFAULT_STEEPNESS_CAP,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { zeta: spar_core::spar::DEFAULT_ZETA, hidden: vec![16; 3] }
    }
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        let d = BandwidthOptions::default();
        Self { kappa_min: 10.0, kappa_max: 1e4, kappa_count: d.kappa_grid.len(), m_pred: d.m_pred, k_exclude: d.k_exclude }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
            restart_shrink: t.restart_shrink,
            max_restarts: t.max_restarts,
        }
    }
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { zeta_min: 0.0125, zeta_max: 0.25, zeta_step: 0.0125, q_level: diagnostics::DEFAULT_Q_LEVEL }
    }
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            theta_max_deg: diagnostics::DEFAULT_THETA_MAX_DEG,
            grid_m: 5,
            min_count: diagnostics::DEFAULT_MIN_COUNT,
            stride: diagnostics::DEFAULT_STRIDE,
            sim_factor: 100,
            confidence: 0.95,
            tail_grid_points: 200,
            bootstrap_replicates: diagnostics::DEFAULT_N_BOOT,
            block_length: diagnostics::DEFAULT_BLOCK_LEN,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AppError::Config(m.to_string()));
        if !(self.model.zeta > 0.0 && self.model.zeta < 1.0) {
            return bad("model.zeta must lie in (0, 1)");
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return bad("model.hidden needs at least one nonzero layer width");
        }
        if self.data.columns.is_empty() {
            return bad("data.columns is empty");
        }
        if self.data.kind == DataKind::Metocean && self.data.columns.len() != 5 {
            return bad("metocean data needs exactly five columns: H_s, T_m, theta_wave, U_10, theta_wind");
        }
        if !self.data.roles.is_empty() {
            if self.data.kind == DataKind::Metocean {
                return bad("data.roles applies to generic data only");
            }
            if self.data.roles.len() != self.data.columns.len() {
                return bad("data.roles must match data.columns in length");
            }
            if let Some(r) = self.data.roles.iter().find(|r| Role::parse(r).is_none()) {
                return Err(AppError::Config(format!("unknown role `{r}` (expected component, log or plain)")));
            }
        }
        if !(self.bandwidth.kappa_min > 0.0 && self.bandwidth.kappa_max >= self.bandwidth.kappa_min && self.bandwidth.kappa_count >= 1) {
            return bad("bandwidth grid needs 0 < kappa_min <= kappa_max and kappa_count >= 1");
        }
        if !(self.stability.zeta_step > 0.0 && self.stability.zeta_min > 0.0 && self.stability.zeta_max < 1.0) {
            return bad("stability grid must lie in (0, 1) with a positive step");
        }
        if self.diagnostics.stride == 0 || self.diagnostics.sim_factor == 0 || self.diagnostics.grid_m == 0 {
            return bad("diagnostics.stride, sim_factor and grid_m must be positive");
        }
        if !(self.diagnostics.confidence > 0.0 && self.diagnostics.confidence < 1.0) {
            return bad("diagnostics.confidence must lie in (0, 1)");
        }
        self.train_config().validate().map_err(AppError::from)
    }

    pub fn roles(&self) -> Vec<Role> {
        if self.data.roles.is_empty() {
            vec![Role::Component; self.data.columns.len()]
        } else {
            self.data.roles.iter().map(|r| Role::parse(r).expect("validated")).collect()
        }
    }

    pub fn bandwidth_options(&self) -> BandwidthOptions {
        BandwidthOptions {
            kappa_grid: log_spaced(self.bandwidth.kappa_min, self.bandwidth.kappa_max, self.bandwidth.kappa_count),
            m_pred: self.bandwidth.m_pred,
            k_exclude: self.bandwidth.k_exclude,
            seed: spar_core::random::derive_seed(self.seed, 100),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
            restart_shrink: t.restart_shrink,
            max_restarts: t.max_restarts,
            seed: self.seed,
        }
    }

    /// `zeta_min, zeta_min + step, …` up to `zeta_max` inclusive, each value
    /// rounded to the step's lattice so that `k · step` is exact.
    pub fn zeta_grid(&self) -> Vec<f64> {
        let s = &self.stability;
        let first = (s.zeta_min / s.zeta_step).round() as i64;
        let last = (s.zeta_max / s.zeta_step + 1e-9).floor() as i64;
        (first..=last).map(|k| k as f64 * s.zeta_step).filter(|z| *z >= s.zeta_min - 1e-12).collect()
    }

    pub fn theta_max(&self) -> f64 {
        self.diagnostics.theta_max_deg.to_radians()
    }
}
