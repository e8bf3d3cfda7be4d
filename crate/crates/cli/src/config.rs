//! Run configuration: TOML file with sections, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use polymer_core::ctrw::{self, RateVector};
use polymer_core::levy_env::EnvironmentParams;
use polymer_core::mc_polymer::{EnsembleOptions, Route};
use polymer_core::pam_solver::{EventPlacement, SolverOptions};
use polymer_core::par::ExecMode;
use polymer_core::verify::Level;
use serde::{Deserialize, Serialize};

/// A configuration problem. Reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub environment: EnvironmentSection,
    pub walk: WalkSection,
    pub experiment: ExperimentSection,
    pub solver: SolverSection,
    pub rate_table: RateTableSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; `None` leaves the choice to the thread pool.
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, threads: None, out: PathBuf::from("polymer-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub preset: String,
    /// Replaces the Gaussian variance of the preset.
    pub sigma2: Option<f64>,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        EnvironmentSection { preset: "gaussian(0.5)".into(), sigma2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub dim: usize,
    pub kappa: f64,
    /// Full rate vector `(+e1, -e1, +e2, -e2, ...)`; overrides `kappa`.
    pub rates: Option<Vec<f64>>,
    /// Second walk of the comparison experiment.
    pub kappa2: f64,
    pub rates2: Option<Vec<f64>>,
}

impl Default for WalkSection {
    fn default() -> Self {
        WalkSection { dim: 1, kappa: 1.0, rates: None, kappa2: 1.0, rates2: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    FreeEnergy,
    Annealed,
    Cumulant,
    Rate,
    Sandwich,
    Comparison,
    Disorder,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::FreeEnergy,
        ExperimentKind::Annealed,
        ExperimentKind::Cumulant,
        ExperimentKind::Rate,
        ExperimentKind::Sandwich,
        ExperimentKind::Comparison,
        ExperimentKind::Disorder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FreeEnergy => "free_energy",
            ExperimentKind::Annealed => "annealed",
            ExperimentKind::Cumulant => "cumulant",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Sandwich => "sandwich",
            ExperimentKind::Comparison => "comparison",
            ExperimentKind::Disorder => "disorder",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub horizon: f64,
    /// Horizons of the free-energy table; empty means just `horizon`.
    pub horizons: Vec<f64>,
    /// Observation times of the disorder diagnostic.
    pub times: Vec<f64>,
    /// Tilt vectors; empty means a default grid along the first axis.
    pub lambda: Vec<Vec<f64>>,
    /// Velocities for the rate estimate.
    pub x: Vec<Vec<f64>>,
    pub n_env: usize,
    pub n_paths: usize,
    pub route: Route,
    /// Horizon of the exported fields for `solve`; empty means the final time.
    pub field_times: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::FreeEnergy,
            horizon: 2.0,
            horizons: Vec::new(),
            times: vec![2.0, 4.0, 8.0],
            lambda: Vec::new(),
            x: Vec::new(),
            n_env: 100,
            n_paths: 1000,
            route: Route::Solver,
            field_times: Vec::new(),
        }
    }
}

/// Box radius: a number, or `"auto"` for the smallest certified one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Radius {
    Fixed(u32),
    Named(String),
}

impl Default for Radius {
    fn default() -> Self {
        Radius::Named("auto".into())
    }
}

impl std::str::FromStr for Radius {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Radius::default());
        }
        s.parse::<u32>().map(Radius::Fixed).map_err(|_| format!("radius must be `auto` or a nonnegative integer, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    pub tolerance: f64,
    pub placement: EventPlacement,
    pub radius: Radius,
    /// Accept a fixed radius below the certified one.
    pub allow_small_box: bool,
    /// Box-exit probability targeted by `radius = "auto"`.
    pub escape_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        SolverSection {
            dt: s.dt,
            tolerance: s.tolerance,
            placement: s.placement,
            radius: Radius::default(),
            allow_small_box: false,
            escape_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateTableSection {
    pub kappas: Vec<f64>,
    pub x_min: f64,
    pub x_max: f64,
    /// Grid points per axis.
    pub points: usize,
}

impl Default for RateTableSection {
    fn default() -> Self {
        RateTableSection { kappas: vec![0.5, 1.0, 2.0], x_min: -2.0, x_max: 2.0, points: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub level: Level,
    /// Empty runs every check.
    pub checks: Vec<u32>,
    pub tolerance_scale: f64,
    /// Seed of the battery; `--seed` sets it too.
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let seed = polymer_core::verify::VerifyConfig::default().seed;
        VerifySection { level: Level::Quick, checks: Vec::new(), tolerance_scale: 1.0, seed }
    }
}

/// Largest box a single run may allocate, in sites.
pub const MAX_SITES: usize = 50_000_000;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                RunConfig::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> Result<EnvironmentParams, ConfigError> {
        let mut p = EnvironmentParams::from_preset(&self.environment.preset).map_err(|e| ConfigError(e.to_string()))?;
        if let Some(s2) = self.environment.sigma2 {
            p = EnvironmentParams::new(s2, p.levy).map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(p)
    }

    fn rate_vector(&self, kappa: f64, rates: &Option<Vec<f64>>, label: &str) -> Result<RateVector, ConfigError> {
        let dim = self.walk.dim;
        match rates {
            Some(r) => {
                if r.len() != 2 * dim {
                    return bad(format!("{label}: expected {} rates for dimension {dim}, got {}", 2 * dim, r.len()));
                }
                if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || r.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("{label}: rates must be nonnegative with a positive total"));
                }
                RateVector::new(dim, r.clone()).map_err(|e| ConfigError(e.to_string()))
            }
            None => {
                if !(kappa > 0.0) || !kappa.is_finite() {
                    return bad(format!("{label}: kappa = {kappa} must be positive"));
                }
                RateVector::isotropic(dim, kappa).map_err(|e| ConfigError(e.to_string()))
            }
        }
    }

    pub fn kv(&self) -> Result<RateVector, ConfigError> {
        self.rate_vector(self.walk.kappa, &self.walk.rates, "walk")
    }

    pub fn kv2(&self) -> Result<RateVector, ConfigError> {
        self.rate_vector(self.walk.kappa2, &self.walk.rates2, "second walk")
    }

    /// Total rate of the main walk, used where an isotropic `kappa` is needed.
    pub fn kappa(&self) -> Result<f64, ConfigError> {
        Ok(self.kv()?.total_rate())
    }

    pub fn horizons(&self) -> Vec<f64> {
        if self.experiment.horizons.is_empty() {
            vec![self.experiment.horizon]
        } else {
            self.experiment.horizons.clone()
        }
    }

    pub fn lambdas(&self) -> Vec<Vec<f64>> {
        if !self.experiment.lambda.is_empty() {
            return self.experiment.lambda.clone();
        }
        [-0.5, -0.25, 0.0, 0.25, 0.5]
            .iter()
            .map(|&l| {
                let mut v = vec![0.0; self.walk.dim];
                v[0] = l;
                v
            })
            .collect()
    }

    pub fn velocities(&self) -> Vec<Vec<f64>> {
        if !self.experiment.x.is_empty() {
            return self.experiment.x.clone();
        }
        [0.0, 0.25, 0.5]
            .iter()
            .map(|&x| {
                let mut v = vec![0.0; self.walk.dim];
                v[0] = x;
                v
            })
            .collect()
    }

    pub fn solver_options(&self, exec: ExecMode) -> SolverOptions {
        SolverOptions {
            dt: self.solver.dt,
            tolerance: self.solver.tolerance,
            placement: self.solver.placement,
            exec,
            record_fields: true,
            escape_tolerance: self.solver.escape_tolerance,
        }
    }

    /// Ensemble settings: parallel over environments, sequential inside each.
    pub fn ensemble_options(&self) -> EnsembleOptions {
        EnsembleOptions {
            route: self.experiment.route,
            n_paths: self.experiment.n_paths,
            solver: SolverOptions { record_fields: false, ..self.solver_options(ExecMode::Sequential) },
            radius: self.fixed_radius(),
            escape_tolerance: self.solver.escape_tolerance,
            exec: ExecMode::Parallel,
        }
    }

    pub fn fixed_radius(&self) -> Option<u32> {
        match self.solver.radius {
            Radius::Fixed(r) => Some(r),
            Radius::Named(_) => None,
        }
    }

    /// Radius for walks with rates `kvs` up to `horizon`, checked against the
    /// certified need.
    pub fn radius_for(&self, kvs: &[&RateVector], horizon: f64) -> Result<u32, ConfigError> {
        let need = ctrw::certified_radius(kvs, horizon, self.solver.escape_tolerance);
        let r = match self.fixed_radius() {
            None => need,
            Some(r) if r < need && !self.solver.allow_small_box => {
                return bad(format!(
                    "box radius {r} is below the certified radius {need} for escape tolerance {:e}; pass --allow-small-box to accept",
                    self.solver.escape_tolerance
                ))
            }
            Some(r) => r,
        };
        let sites = (2 * r as usize + 1).checked_pow(self.walk.dim as u32).unwrap_or(usize::MAX);
        if sites > MAX_SITES {
            return bad(format!("box of radius {r} in dimension {} has {sites} sites (limit {MAX_SITES})", self.walk.dim));
        }
        Ok(r)
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate_common(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.walk.dim) {
            return bad(format!("dimension {} must be 1, 2 or 3", self.walk.dim));
        }
        if let Radius::Named(s) = &self.solver.radius {
            if s != "auto" {
                return bad(format!("radius must be `auto` or an integer, got `{s}`"));
            }
        }
        if !(self.solver.dt > 0.0) || !self.solver.dt.is_finite() {
            return bad(format!("dt = {} must be positive", self.solver.dt));
        }
        if !(self.solver.tolerance > 0.0 && self.solver.tolerance < 1.0) {
            return bad(format!("tolerance = {} must lie in (0, 1)", self.solver.tolerance));
        }
        if !(self.solver.escape_tolerance > 0.0 && self.solver.escape_tolerance < 1.0) {
            return bad(format!("escape tolerance = {} must lie in (0, 1)", self.solver.escape_tolerance));
        }
        if self.run.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        self.params()?;
        self.kv()?;
        Ok(())
    }

    pub fn validate_horizons(&self, ts: &[f64]) -> Result<(), ConfigError> {
        if ts.is_empty() {
            return bad("no horizon given");
        }
        for &t in ts {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("horizon T = {t} must be positive"));
            }
        }
        Ok(())
    }

    pub fn validate_vectors(&self, vs: &[Vec<f64>], label: &str) -> Result<(), ConfigError> {
        for v in vs {
            if v.len() != self.walk.dim {
                return bad(format!("{label} {v:?} has length {}, expected {}", v.len(), self.walk.dim));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return bad(format!("{label} {v:?} is not finite"));
            }
        }
        Ok(())
    }
}

/// Parse `"0.1,0.2"` into a vector.
pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}
