//! Command-line flags. Every config key has a flag; flags win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use polymer_core::mc_polymer::Route;
use polymer_core::pam_solver::EventPlacement;
use polymer_core::verify::Level;

use crate::config::{parse_vector, ConfigError, ExperimentKind, Radius, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "polymer", version, about = "Directed polymers in Lévy random environments")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "POLYMER_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Environment preset, e.g. `hard_obstacles(1) + gaussian(0.5)`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the walk rate function by both routes.
    RateTable {
        #[command(flatten)]
        params: ParamArgs,
        /// Comma-separated jump rates.
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        #[arg(long, allow_hyphen_values = true)]
        x_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        x_max: Option<f64>,
        /// Grid points per axis.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Solve one environment realization and export Z, W and fields.
    Solve {
        #[command(flatten)]
        params: ParamArgs,
        /// Times at which to dump the field (repeatable).
        #[arg(long = "field-time")]
        field_times: Vec<f64>,
    },
    /// Run an ensemble experiment over many environments.
    Ensemble {
        #[command(flatten)]
        params: ParamArgs,
        /// free-energy, annealed, cumulant, rate, sandwich, comparison or disorder.
        #[arg(long)]
        kind: Option<ExperimentKind>,
    },
    /// Run the verification battery.
    Verify {
        #[command(flatten)]
        params: ParamArgs,
        /// quick or full.
        #[arg(long)]
        level: Option<Level>,
        /// Comma-separated check ids; all by default.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<u32>>,
        /// Multiplies every threshold.
        #[arg(long, hide = true)]
        tolerance_scale: Option<f64>,
    },
    /// Sample one environment and write its events as JSON.
    EnvSample {
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    /// Gaussian variance per unit time, replacing the preset's.
    #[arg(long, allow_hyphen_values = true)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Total jump rate of the walk.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Full rate vector `+e1,-e1,+e2,-e2,...`.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Total jump rate of the second walk (comparison).
    #[arg(long, allow_hyphen_values = true)]
    pub kappa2: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub rates2: Option<Vec<f64>>,
    /// Horizon T.
    #[arg(long, short = 'T', allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub horizons: Option<Vec<f64>>,
    /// Observation times of the disorder diagnostic.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Tilt vector, comma-separated (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Vec<String>,
    /// Velocity vector, comma-separated (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    pub x: Vec<String>,
    #[arg(long)]
    pub n_env: Option<usize>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// solver or paths.
    #[arg(long, value_parser = parse_route)]
    pub route: Option<Route>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// exact, midpoint or auto.
    #[arg(long, value_parser = parse_placement)]
    pub placement: Option<EventPlacement>,
    /// Box radius or `auto`.
    #[arg(long)]
    pub radius: Option<Radius>,
    /// Accept a box below the certified radius.
    #[arg(long)]
    pub allow_small_box: bool,
    #[arg(long)]
    pub escape_tolerance: Option<f64>,
}

fn parse_route(s: &str) -> Result<Route, String> {
    match s {
        "solver" => Ok(Route::Solver),
        "paths" => Ok(Route::Paths),
        _ => Err(format!("unknown route `{s}` (expected solver or paths)")),
    }
}

fn parse_placement(s: &str) -> Result<EventPlacement, String> {
    match s {
        "exact" => Ok(EventPlacement::Exact),
        "midpoint" => Ok(EventPlacement::Midpoint),
        "auto" => Ok(EventPlacement::Auto),
        _ => Err(format!("unknown placement `{s}` (expected exact, midpoint or auto)")),
    }
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl ParamArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if self.sigma2.is_some() {
            cfg.environment.sigma2 = self.sigma2;
        }
        set(&mut cfg.walk.dim, &self.dim);
        if let Some(k) = self.kappa {
            cfg.walk.kappa = k;
            cfg.walk.rates = None;
        }
        if self.rates.is_some() {
            cfg.walk.rates = self.rates.clone();
        }
        if let Some(k) = self.kappa2 {
            cfg.walk.kappa2 = k;
            cfg.walk.rates2 = None;
        }
        if self.rates2.is_some() {
            cfg.walk.rates2 = self.rates2.clone();
        }
        set(&mut cfg.experiment.horizon, &self.horizon);
        set(&mut cfg.experiment.horizons, &self.horizons);
        set(&mut cfg.experiment.times, &self.times);
        let vectors = |raw: &[String]| -> Result<Vec<Vec<f64>>, ConfigError> {
            raw.iter().map(|s| parse_vector(s).map_err(ConfigError)).collect()
        };
        if !self.lambda.is_empty() {
            cfg.experiment.lambda = vectors(&self.lambda)?;
        }
        if !self.x.is_empty() {
            cfg.experiment.x = vectors(&self.x)?;
        }
        set(&mut cfg.experiment.n_env, &self.n_env);
        set(&mut cfg.experiment.n_paths, &self.n_paths);
        set(&mut cfg.experiment.route, &self.route);
        set(&mut cfg.solver.dt, &self.dt);
        set(&mut cfg.solver.tolerance, &self.tolerance);
        set(&mut cfg.solver.placement, &self.placement);
        set(&mut cfg.solver.radius, &self.radius);
        if self.allow_small_box {
            cfg.solver.allow_small_box = true;
        }
        set(&mut cfg.solver.escape_tolerance, &self.escape_tolerance);
        Ok(())
    }
}

impl Cli {
    /// The configuration file with every given flag applied on top.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        set(&mut cfg.run.seed, &self.seed);
        if self.threads.is_some() {
            cfg.run.threads = self.threads;
        }
        set(&mut cfg.run.out, &self.out);
        set(&mut cfg.environment.preset, &self.preset);
        match &self.command {
            Command::RateTable { params, kappas, x_min, x_max, points } => {
                params.apply(&mut cfg)?;
                set(&mut cfg.rate_table.kappas, kappas);
                set(&mut cfg.rate_table.x_min, x_min);
                set(&mut cfg.rate_table.x_max, x_max);
                set(&mut cfg.rate_table.points, points);
            }
            Command::Solve { params, field_times } => {
                params.apply(&mut cfg)?;
                if !field_times.is_empty() {
                    cfg.experiment.field_times = field_times.clone();
                }
            }
            Command::Ensemble { params, kind } => {
                params.apply(&mut cfg)?;
                set(&mut cfg.experiment.kind, kind);
            }
            Command::Verify { params, level, checks, tolerance_scale } => {
                params.apply(&mut cfg)?;
                set(&mut cfg.verify.level, level);
                set(&mut cfg.verify.checks, checks);
                set(&mut cfg.verify.tolerance_scale, tolerance_scale);
                set(&mut cfg.verify.seed, &self.seed);
            }
            Command::EnvSample { params } => params.apply(&mut cfg)?,
        }
        Ok(cfg)
    }

    pub fn command_name(&self) -> &'static str {
        match self.command {
            Command::RateTable { .. } => "rate-table",
            Command::Solve { .. } => "solve",
            Command::Ensemble { .. } => "ensemble",
            Command::Verify { .. } => "verify",
            Command::EnvSample { .. } => "env-sample",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[walk]\nkappa = 5.0\ndim = 2\n[experiment]\nn_env = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "polymer",
            "ensemble",
            "--config",
            path.to_str().unwrap(),
            "--kappa",
            "2.5",
            "--lambda",
            "-0.5,0.25",
            "--radius",
            "9",
        ])
        .unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.walk.kappa, 2.5);
        assert_eq!(cfg.walk.dim, 2);
        assert_eq!(cfg.experiment.n_env, 7);
        assert_eq!(cfg.experiment.lambda, vec![vec![-0.5, 0.25]]);
        assert_eq!(cfg.solver.radius, Radius::Fixed(9));
    }

    #[test]
    fn negative_grid_bounds_parse() {
        let cli = Cli::try_parse_from(["polymer", "rate-table", "--x-min", "-3", "--x-max", "1.5"]).unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!((cfg.rate_table.x_min, cfg.rate_table.x_max), (-3.0, 1.5));
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["polymer", "solve", "--seed", "42", "--preset", "hard_obstacles(1)", "-T", "3"]).unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.environment.preset, "hard_obstacles(1)");
        assert_eq!(cfg.experiment.horizon, 3.0);
    }

    #[test]
    fn kind_and_level_parse() {
        let cli = Cli::try_parse_from(["polymer", "ensemble", "--kind", "free-energy"]).unwrap();
        assert_eq!(cli.resolve().unwrap().experiment.kind, ExperimentKind::FreeEnergy);
        let cli = Cli::try_parse_from(["polymer", "verify", "--level", "full", "--checks", "1,2"]).unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.verify.level, Level::Full);
        assert_eq!(cfg.verify.checks, vec![1, 2]);
    }
}
