//! Path-sampling estimators of partition functions, independent of the
//! lattice solver, and the environment ensembles built on top of them.
//!
//! Every sample draws its randomness from a counter-based stream keyed by
//! `(master seed, sample index, ...)`, so results do not depend on the
//! number of worker threads.

use serde::{Deserialize, Serialize};

use crate::ctrw::{self, PolymerPath, RateVector};
use crate::error::{PolymerError, Result};
use crate::lattice::{pairwise_sum, LatticeBox};
use crate::levy_env::{sample_environment, EnvironmentParams, EnvironmentRealization};
use crate::pam_solver::{solve_p2p, SolverOptions};
use crate::par::{self, ExecMode};
use crate::seeding::{self, stream};
use crate::stats::{mean_and_se, Estimate};

/// How a quenched partition function is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Plain path sampling.
    Paths,
    /// The lattice solver.
    #[default]
    Solver,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Route::Paths => "paths",
            Route::Solver => "solver",
        })
    }
}

/// Settings shared by ensemble estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub route: Route,
    /// Paths per environment on the path route.
    pub n_paths: usize,
    pub solver: SolverOptions,
    /// Box radius; `None` picks the smallest certified one.
    pub radius: Option<u32>,
    /// Target for the box-exit probability when the radius is automatic.
    pub escape_tolerance: f64,
    /// Parallelism over environments.
    pub exec: ExecMode,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            route: Route::Solver,
            n_paths: 1000,
            solver: SolverOptions { record_fields: false, ..SolverOptions::default() },
            radius: None,
            escape_tolerance: 1e-12,
            exec: ExecMode::default(),
        }
    }
}

impl EnsembleOptions {
    /// Radius used for walks with any of the rate vectors `kvs` up to `horizon`.
    pub fn radius_for(&self, kvs: &[&RateVector], horizon: f64) -> u32 {
        self.radius.unwrap_or_else(|| ctrw::certified_radius(kvs, horizon, self.escape_tolerance))
    }
}

/// Seed of environment number `sample` (optionally within block `block`).
pub fn environment_seed(master: u64, block: u64, sample: u64) -> u64 {
    seeding::derive(master, &[stream::ENVIRONMENT, block, sample])
}

/// `H_T = sum over constancy intervals of L_site(end) - L_site(start)`.
pub fn hamiltonian(env: &EnvironmentRealization, path: &PolymerPath, horizon: f64) -> Result<f64> {
    hamiltonian_between(env, path, 0.0, horizon)
}

/// The Hamiltonian accumulated over `[a, b]`.
pub fn hamiltonian_between(env: &EnvironmentRealization, path: &PolymerPath, a: f64, b: f64) -> Result<f64> {
    if !(0.0 <= a && a <= b) || path.horizon < b || b > env.horizon() {
        return Err(PolymerError::InvalidParameter(format!(
            "interval [{a}, {b}] exceeds the path ({}) or environment ({}) horizon",
            path.horizon,
            env.horizon()
        )));
    }
    let lbox = env.lattice_box();
    let mut h = 0.0;
    for (s, e, site) in path.segments() {
        if e <= a {
            continue;
        }
        if s >= b {
            break;
        }
        let idx = lbox.index_of(&site).ok_or(PolymerError::PathEscaped { radius: lbox.radius(), time: s.max(a) })?;
        let piece = env.log_weight_factor_index(idx, s.max(a), e.min(b));
        if piece == f64::NEG_INFINITY {
            return Ok(piece);
        }
        h += piece;
    }
    Ok(h)
}

/// Quenched `Z_T = E[exp(H_T)]` over `n_paths` sampled paths.
pub fn estimate_z(
    env: &EnvironmentRealization,
    kv: &RateVector,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Estimate> {
    if n_paths < 2 {
        return Err(PolymerError::InvalidParameter("at least two paths are needed".into()));
    }
    let weights: Result<Vec<f64>> = par::map_indexed(exec, n_paths, |i| {
        let mut rng = seeding::rng(seed, &[stream::PATHS, i as u64]);
        let path = ctrw::sample_path(kv, horizon, &mut rng);
        hamiltonian(env, &path, horizon).map(f64::exp)
    })
    .into_iter()
    .collect();
    let weights = weights?;
    let mut est = Estimate::from_samples(&weights);
    est.degenerate = weights.iter().all(|&w| w == 0.0);
    Ok(est)
}

/// `log Z_T` of one realization along the chosen route.
pub fn quenched_log_z(
    env: &EnvironmentRealization,
    kv: &RateVector,
    horizon: f64,
    lbox: LatticeBox,
    opts: &EnsembleOptions,
    path_seed: u64,
) -> Result<f64> {
    match opts.route {
        Route::Paths => Ok(estimate_z(env, kv, horizon, opts.n_paths, path_seed, ExecMode::Sequential)?.value.ln()),
        Route::Solver => {
            let solver = SolverOptions { record_fields: false, ..opts.solver.clone() };
            solve_p2p(env, kv, horizon, lbox, &solver, &[])?.log_partition_function(horizon)
        }
    }
}

/// Refuse parameters for which `exp(L_0(T))` has a relative variance above `1e4`.
///
/// `Var[e^L] / E[e^L]^2 = exp(T (sigma^2 + sum nu r^2)) - 1`.
pub fn check_variance(params: &EnvironmentParams, horizon: f64) -> Result<()> {
    let exponent = horizon * (params.sigma2 + params.levy.second_moment_rate());
    if exponent > 1e4f64.ln() {
        return Err(PolymerError::VarianceInfeasible(format!(
            "relative variance of exp(L_0(T)) is exp({exponent:.3}) - 1; shorten T or bound the marks"
        )));
    }
    Ok(())
}

/// Output of [`annealed_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealedReport {
    /// `(1/T) log mean Z_T`, delta-method SE; compare with `alpha`.
    pub rate: Estimate,
    /// Mean of `W_T = Z_T exp(-alpha T)`; compare with 1.
    pub mean_w: Estimate,
    pub alpha: f64,
    pub horizon: f64,
    pub radius: u32,
}

/// Average quenched `Z_T` over `n_env` independent environments.
pub fn annealed_check(
    params: &EnvironmentParams,
    kv: &RateVector,
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<AnnealedReport> {
    check_variance(params, horizon)?;
    if n_env < 2 {
        return Err(PolymerError::InvalidParameter("at least two environments are needed".into()));
    }
    let alpha = params.alpha();
    let radius = opts.radius_for(&[kv], horizon);
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let w: Result<Vec<f64>> = par::map_indexed(opts.exec, n_env, |i| {
        let env = sample_environment(params, lbox, horizon, environment_seed(seed, 0, i as u64))?;
        let lz = quenched_log_z(&env, kv, horizon, lbox, opts, seeding::derive(seed, &[stream::PATHS, i as u64]))?;
        Ok((lz - alpha * horizon).exp())
    })
    .into_iter()
    .collect();
    let mean_w = Estimate::from_samples(&w?);
    let rate = if mean_w.value > 0.0 {
        Estimate {
            value: alpha + mean_w.value.ln() / horizon,
            std_error: mean_w.std_error / (mean_w.value * horizon),
            n: n_env,
            log_domain: true,
            degenerate: false,
        }
    } else {
        Estimate { value: f64::NEG_INFINITY, std_error: 0.0, n: n_env, log_domain: true, degenerate: true }
    };
    Ok(AnnealedReport { rate, mean_w, alpha, horizon, radius })
}

/// One row of [`free_energy_mc`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    pub horizon: f64,
    /// Mean of `(1/T) log Z_T` over surviving environments.
    pub estimate: Estimate,
    pub route: Route,
    /// Fraction of environments with `Z_T = 0`; when positive the estimate is
    /// conditional on survival and flagged `degenerate`.
    pub extinct_fraction: f64,
    pub n_env: usize,
}

/// `(1/T) log Z_T` averaged over environments, for each horizon in `horizons`.
pub fn free_energy_mc(
    params: &EnvironmentParams,
    kv: &RateVector,
    horizons: &[f64],
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<Vec<FreeEnergyRow>> {
    if horizons.windows(2).any(|w| w[0] >= w[1]) || horizons.iter().any(|&t| t <= 0.0) {
        return Err(PolymerError::InvalidParameter("horizons must be positive and increasing".into()));
    }
    let mut rows = Vec::with_capacity(horizons.len());
    for (j, &horizon) in horizons.iter().enumerate() {
        let radius = opts.radius_for(&[kv], horizon);
        let lbox = LatticeBox::new(kv.dim(), radius)?;
        let vals: Result<Vec<f64>> = par::map_indexed(opts.exec, n_env, |i| {
            let env = sample_environment(params, lbox, horizon, environment_seed(seed, j as u64 + 1, i as u64))?;
            let path_seed = seeding::derive(seed, &[stream::PATHS, j as u64 + 1, i as u64]);
            Ok(quenched_log_z(&env, kv, horizon, lbox, opts, path_seed)? / horizon)
        })
        .into_iter()
        .collect();
        rows.push(free_energy_row(horizon, opts.route, &vals?));
    }
    Ok(rows)
}

fn free_energy_row(horizon: f64, route: Route, vals: &[f64]) -> FreeEnergyRow {
    let alive: Vec<f64> = vals.iter().cloned().filter(|v| v.is_finite()).collect();
    let extinct_fraction = 1.0 - alive.len() as f64 / vals.len() as f64;
    let (value, std_error) = if alive.is_empty() { (f64::NEG_INFINITY, 0.0) } else { mean_and_se(&alive) };
    FreeEnergyRow {
        horizon,
        estimate: Estimate { value, std_error, n: alive.len(), log_domain: true, degenerate: extinct_fraction > 0.0 },
        route,
        extinct_fraction,
        n_env: vals.len(),
    }
}

/// CSV with columns `T,estimate,std_error,n,route,extinct_fraction`.
pub fn free_energy_csv(rows: &[FreeEnergyRow]) -> String {
    let mut s = String::from("T,estimate,std_error,n,route,extinct_fraction\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.horizon, r.estimate.value, r.estimate.std_error, r.estimate.n, r.route, r.extinct_fraction
        ));
    }
    s
}

/// Mean of `exp(H)` over paths, kept in log space: `log mean exp(h_i)`.
pub fn log_mean_exp(hs: &[f64]) -> f64 {
    let m = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let terms: Vec<f64> = hs.iter().map(|h| (h - m).exp()).collect();
    m + (pairwise_sum(&terms) / hs.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_env::Event;

    fn one_event_env(site: i32, s: f64, r: f64) -> EnvironmentRealization {
        let lbox = LatticeBox::new(1, 20).unwrap();
        let params = EnvironmentParams::bernoulli_reward(r, 1.0).unwrap();
        EnvironmentRealization::from_events(params, lbox, 2.0, 0, &[(vec![site], vec![Event { time: s, mark: r }])])
            .unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let pinned = PolymerPath::constant(1, 2.0);
        let env = one_event_env(0, 0.5, 1.0);
        assert!((hamiltonian(&env, &pinned, 2.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let elsewhere = one_event_env(3, 0.5, 1.0);
        assert_eq!(hamiltonian(&elsewhere, &pinned, 2.0).unwrap(), 0.0);
        let killer = one_event_env(0, 0.5, -1.0);
        assert_eq!(hamiltonian(&killer, &pinned, 2.0).unwrap(), f64::NEG_INFINITY);
        let before = hamiltonian(&env, &pinned, 0.4).unwrap();
        assert_eq!(before, 0.0);
    }

    #[test]
    fn escaping_path_is_an_error() {
        let lbox = LatticeBox::new(1, 1).unwrap();
        let env = sample_environment(&EnvironmentParams::empty(), lbox, 1.0, 0).unwrap();
        let path = PolymerPath { dim: 1, horizon: 1.0, jumps: vec![(0.1, 0), (0.2, 0)] };
        assert!(matches!(hamiltonian(&env, &path, 1.0), Err(PolymerError::PathEscaped { .. })));
    }

    #[test]
    fn empty_environment_gives_exactly_one() {
        let lbox = LatticeBox::new(2, 30).unwrap();
        let env = sample_environment(&EnvironmentParams::empty(), lbox, 1.0, 0).unwrap();
        let kv = RateVector::isotropic(2, 1.0).unwrap();
        let e = estimate_z(&env, &kv, 1.0, 100, 4, ExecMode::Parallel).unwrap();
        assert_eq!((e.value, e.std_error), (1.0, 0.0));
    }

    #[test]
    fn estimates_do_not_depend_on_exec_mode() {
        let lbox = LatticeBox::new(1, 20).unwrap();
        let params = EnvironmentParams::from_preset("hard_obstacles(0.5)+bernoulli_reward(0.3,1)").unwrap();
        let env = sample_environment(&params, lbox, 1.0, 9).unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let a = estimate_z(&env, &kv, 1.0, 500, 1, ExecMode::Sequential).unwrap();
        let b = estimate_z(&env, &kv, 1.0, 500, 1, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_check_refuses_wild_marks() {
        assert!(check_variance(&EnvironmentParams::bernoulli_reward(20.0, 1.0).unwrap(), 1.0).is_err());
        assert!(check_variance(&EnvironmentParams::bernoulli_reward(0.3, 0.5).unwrap(), 1.0).is_ok());
    }

    #[test]
    fn free_energy_of_empty_environment_vanishes() {
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let rows = free_energy_mc(&EnvironmentParams::empty(), &kv, &[1.0, 2.0], 4, 0, &EnsembleOptions::default())
            .unwrap();
        for r in &rows {
            assert!(r.estimate.value.abs() < 1e-11);
            assert_eq!(r.extinct_fraction, 0.0);
        }
        assert!(free_energy_csv(&rows).starts_with("T,estimate,std_error,n,route,extinct_fraction\n1,"));
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[1000.0, 1000.0]) - 1000.0).abs() < 1e-12);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
