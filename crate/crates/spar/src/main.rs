use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spar::commands::{self, ContourArgs, SimulateArgs, SynthArgs, MODEL_FILE};
use spar::{AppError, Result, RunConfig};
use spar_core::synthetic::SyntheticSpec;

/// Semi-parametric angular-radial models for multivariate extremes.
#[derive(Debug, Parser)]
#[command(name = "spar", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to the configured data.
    Fit,
    /// Draw a sample from a fitted model in physical units.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        /// Sample size; defaults to 100 times the fitted sample.
        #[arg(long)]
        n: Option<usize>,
        /// Steepness cap for metocean models.
        #[arg(long)]
        steepness_cap: Option<f64>,
    },
    /// Predictive likelihood over the bandwidth grid.
    Bandwidth,
    /// Threshold-stability sweep over the exceedance probability.
    Stability,
    /// Diagnostic tables for a fitted model against the configured data.
    Diagnose {
        #[command(flatten)]
        model: ModelArg,
        /// Also refit on block-bootstrap replicates for tail envelopes.
        #[arg(long)]
        bootstrap: bool,
    },
    /// Exceedance contour with total probability beta.
    Contour {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        beta: f64,
        /// Grid resolution; defaults to the configured diagnostic grid.
        #[arg(long)]
        grid_m: Option<usize>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Write a synthetic sample with known tail parameters.
    Synth(SynthOpts),
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file; defaults to `model.spar` in the output directory.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Write the full default configuration (ignores `--config`).
    Init {
        #[arg(default_value = "spar.toml")]
        path: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthOpts {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    zeta: f64,
    #[arg(long, default_value_t = 2.3)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    threshold_modulation: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_modulation: f64,
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    xi: f64,
    #[arg(long, default_value = "synthetic.csv")]
    file_name: String,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.output_dir.as_path();
    let model_path = |m: ModelArg| m.model.unwrap_or_else(|| out.join(MODEL_FILE));
    match cli.command {
        Command::Fit => commands::cmd_fit(&cfg, out),
        Command::Simulate { model, n, steepness_cap } => commands::cmd_simulate(
            &SimulateArgs { model: model_path(model), n, seed: cfg.seed, steepness_cap: steepness_cap.or(Some(cfg.data.steepness_cap)) },
            out,
        ),
        Command::Bandwidth => commands::cmd_bandwidth(&cfg, out),
        Command::Stability => commands::cmd_stability(&cfg, out),
        Command::Diagnose { model, bootstrap } => commands::cmd_diagnose(&model_path(model), &cfg, bootstrap, out),
        Command::Contour { model, beta, grid_m } => {
            commands::cmd_contour(&ContourArgs { model: model_path(model), beta, grid_m: grid_m.unwrap_or(cfg.diagnostics.grid_m) }, out)
        }
        Command::Config { action: ConfigAction::Init { path } } => {
            let path = if path.is_relative() { out.join(path) } else { path };
            let defaults = RunConfig { seed: cli.seed.unwrap_or_default(), ..RunConfig::default() };
            commands::cmd_config_init(&defaults, &path)
        }
        Command::Synth(o) => {
            if o.n == 0 {
                return Err(AppError::Usage("--n must be positive".into()));
            }
            let spec = SyntheticSpec {
                threshold_modulation: o.threshold_modulation,
                sigma_modulation: o.sigma_modulation,
                ..SyntheticSpec::stationary(o.dim, o.zeta, o.threshold, o.sigma, o.xi)
            };
            commands::cmd_synth(&SynthArgs { spec, n: o.n, seed: cfg.seed, file_name: o.file_name }, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPAR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
