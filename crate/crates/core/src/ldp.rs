//! Large-deviation layer: empirical cumulants, the tilting identity, the
//! free-energy sandwich, the comparison inequality, rate-function estimates
//! and a finite-time disorder diagnostic.
//!
//! Every cross-rate comparison reuses one environment per sample for all rate
//! vectors. Environments where some leg has `Z = 0` are dropped from every leg
//! and counted.

use serde::{Deserialize, Serialize};

use crate::ctrw::{self, RateVector, TiltBounds};
use crate::error::{PolymerError, Result};
use crate::lattice::LatticeBox;
use crate::levy_env::{sample_environment, EnvironmentParams, EnvironmentRealization};
use crate::mc_polymer::{environment_seed, EnsembleOptions};
use crate::pam_solver::{solve_p2p, SolveRecord, SolverOptions};
use crate::par;
use crate::stats::{self, Estimate};

/// Rates `kappa_e exp(<lambda, e>)`.
pub fn tilted_rates(kv: &RateVector, lambda: &[f64]) -> Result<RateVector> {
    if lambda.len() != kv.dim() {
        return Err(PolymerError::InvalidParameter("lambda has the wrong dimension".into()));
    }
    let rates = kv
        .rates()
        .iter()
        .enumerate()
        .map(|(dir, k)| {
            let l = lambda[dir / 2];
            k * if dir % 2 == 0 { l } else { -l }.exp()
        })
        .collect();
    RateVector::new(kv.dim(), rates)
}

fn solve_at(
    env: &EnvironmentRealization,
    kv: &RateVector,
    horizon: f64,
    lbox: LatticeBox,
    opts: &SolverOptions,
    record_fields: bool,
) -> Result<SolveRecord> {
    let opts = SolverOptions { record_fields, ..opts.clone() };
    solve_p2p(env, kv, horizon, lbox, &opts, &[])
}

/// `(1/T) log mu_T[exp <lambda, X_T>]` of one realization.
pub fn empirical_cumulant(
    env: &EnvironmentRealization,
    kv: &RateVector,
    lambda: &[f64],
    horizon: f64,
    lbox: LatticeBox,
    opts: &SolverOptions,
) -> Result<f64> {
    let rec = solve_at(env, kv, horizon, lbox, opts, true)?;
    cumulant_from_record(&rec, lambda, horizon)
}

fn cumulant_from_record(rec: &SolveRecord, lambda: &[f64], horizon: f64) -> Result<f64> {
    let zero = vec![0.0; lambda.len()];
    let log_z = rec.log_tilted_mass(horizon, &zero)?;
    if log_z == f64::NEG_INFINITY {
        return Err(PolymerError::Extinct);
    }
    Ok((rec.log_tilted_mass(horizon, lambda)? - log_z) / horizon)
}

/// Ensemble average of [`empirical_cumulant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantSample {
    pub lambda: Vec<f64>,
    pub lambda_hat: Estimate,
    /// The walk's cumulant at `lambda`.
    pub lambda_walk: f64,
    pub horizon: f64,
    pub n_env: usize,
    pub excluded: usize,
    pub radius: u32,
}

pub fn ensemble_cumulant(
    params: &EnvironmentParams,
    kv: &RateVector,
    lambda: &[f64],
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<CumulantSample> {
    let radius = opts.radius_for(&[kv, &tilted_rates(kv, lambda)?], horizon);
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let vals = par::map_indexed(opts.exec, n_env, |i| {
        let env = sample_environment(params, lbox, horizon, environment_seed(seed, 0, i as u64))?;
        match empirical_cumulant(&env, kv, lambda, horizon, lbox, &opts.solver) {
            Err(PolymerError::Extinct) => Ok(None),
            other => other.map(Some),
        }
    });
    let vals: Vec<Option<f64>> = vals.into_iter().collect::<Result<_>>()?;
    let alive: Vec<f64> = vals.iter().flatten().cloned().collect();
    Ok(CumulantSample {
        lambda: lambda.to_vec(),
        lambda_hat: Estimate::from_samples(&alive).in_log_domain(),
        lambda_walk: ctrw::cumulant(kv, lambda),
        horizon,
        n_env,
        excluded: n_env - alive.len(),
        radius,
    })
}

/// Both sides of the tilting identity for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltingResidual {
    /// `log sum_x exp(<lambda, x>) Z^kappa_{T,x}`.
    pub log_lhs: f64,
    /// `T Lambda(lambda) + log Z^{kappa(lambda)}_T`.
    pub log_rhs: f64,
    /// `|lhs - rhs| / rhs`.
    pub residual: f64,
    /// Certified solver error of the comparison (truncation plus escape, relative).
    pub solver_bound: f64,
}

pub fn tilting_identity_residual(
    env: &EnvironmentRealization,
    kv: &RateVector,
    lambda: &[f64],
    horizon: f64,
    lbox: LatticeBox,
    opts: &SolverOptions,
) -> Result<TiltingResidual> {
    let tilted = tilted_rates(kv, lambda)?;
    let base = solve_at(env, kv, horizon, lbox, opts, true)?;
    let tilt_rec = solve_at(env, &tilted, horizon, lbox, opts, false)?;
    let log_lhs = base.log_tilted_mass(horizon, lambda)?;
    let log_rhs = horizon * ctrw::cumulant(kv, lambda) + tilt_rec.log_partition_function(horizon)?;
    if log_rhs == f64::NEG_INFINITY {
        return Err(PolymerError::Extinct);
    }
    let residual = (log_lhs - log_rhs).exp_m1().abs();
    let solver_bound = base.scheme.truncation_bound + tilt_rec.scheme.truncation_bound;
    Ok(TiltingResidual { log_lhs, log_rhs, residual, solver_bound })
}

/// Finite-time rate-function estimate at one `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub x: Vec<f64>,
    /// Endpoint site `round(T x)`.
    pub site: Vec<i32>,
    /// Mean of `(1/T)(log Z_T - log Z_{T, site})`.
    pub j_hat: Estimate,
    /// Closed-form walk rate function at `x`.
    pub i_value: f64,
    /// `-(1/T) log P(X_T = site)` of the free walk.
    pub free_walk_value: f64,
    pub horizon: f64,
    pub n_env: usize,
    pub excluded: usize,
}

pub fn quenched_rate_estimate(
    params: &EnvironmentParams,
    kappa: f64,
    x: &[f64],
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<RateEstimate> {
    let kv = RateVector::isotropic(x.len(), kappa)?;
    let site: Vec<i32> = x.iter().map(|xi| (xi * horizon).round() as i32).collect();
    let far = site.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
    let radius = opts.radius_for(&[&kv], horizon).max(far + 1);
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let vals = par::map_indexed(opts.exec, n_env, |i| {
        let env = sample_environment(params, lbox, horizon, environment_seed(seed, 0, i as u64))?;
        let rec = solve_at(&env, &kv, horizon, lbox, &opts.solver, true)?;
        let lp = rec.log_point_to_point(horizon, &site)?;
        let lz = rec.log_partition_function(horizon)?;
        Ok(if lp.is_finite() { Some((lz - lp) / horizon) } else { None })
    });
    let vals: Vec<Option<f64>> = vals.into_iter().collect::<Result<_>>()?;
    let alive: Vec<f64> = vals.iter().flatten().cloned().collect();
    let free = ctrw::transition_probs(&kv, horizon, lbox, opts.solver.tolerance)?;
    let p = free.field.get(&site).unwrap_or(0.0);
    Ok(RateEstimate {
        x: x.to_vec(),
        site,
        j_hat: Estimate::from_samples(&alive).in_log_domain(),
        i_value: ctrw::rate_function_closed(kappa, x),
        free_walk_value: -p.ln() / horizon,
        horizon,
        n_env,
        excluded: n_env - alive.len(),
    })
}

/// Free energies `(1/T) log Z_T` of several rate vectors on shared environments.
fn shared_free_energies(
    params: &EnvironmentParams,
    kvs: &[RateVector],
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<(Vec<Vec<f64>>, usize, u32)> {
    let refs: Vec<&RateVector> = kvs.iter().collect();
    let radius = opts.radius_for(&refs, horizon);
    let lbox = LatticeBox::new(kvs[0].dim(), radius)?;
    let rows = par::map_indexed(opts.exec, n_env, |i| -> Result<Vec<f64>> {
        let env = sample_environment(params, lbox, horizon, environment_seed(seed, 0, i as u64))?;
        let mut out = Vec::with_capacity(kvs.len());
        for (k, kv) in kvs.iter().enumerate() {
            // identical rate vectors give identical solves
            if let Some(j) = kvs[..k].iter().position(|prev| prev == kv) {
                out.push(out[j]);
                continue;
            }
            let rec = solve_at(&env, kv, horizon, lbox, &opts.solver, false)?;
            out.push(rec.log_partition_function(horizon)? / horizon);
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let kept: Vec<Vec<f64>> = rows.into_iter().filter(|r| r.iter().all(|v| v.is_finite())).collect();
    let excluded = n_env - kept.len();
    let legs = (0..kvs.len()).map(|k| kept.iter().map(|r| r[k]).collect()).collect();
    Ok((legs, excluded, radius))
}

/// The three free-energy legs `kappa_under 1`, `kappa(lambda)`, `kappa_over 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub bounds: TiltBounds,
    pub under: Estimate,
    pub tilted: Estimate,
    pub over: Estimate,
    /// Paired `tilted - under`; should be `>= 0`.
    pub lower_gap: Estimate,
    /// Paired `over - tilted`; should be `>= 0`.
    pub upper_gap: Estimate,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub horizon: f64,
    pub n_env: usize,
    pub excluded: usize,
    pub radius: u32,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Number of standard errors allowed before an inequality counts as violated.
pub const SIGMA_SLACK: f64 = 4.0;

pub fn sandwich_check(
    params: &EnvironmentParams,
    kappa: f64,
    lambda: &[f64],
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<SandwichReport> {
    let bounds = ctrw::kappa_bounds(kappa, lambda)?;
    let kvs = [bounds.under()?, bounds.tilted.clone(), bounds.over()?];
    let (legs, excluded, radius) = shared_free_energies(params, &kvs, horizon, n_env, seed, opts)?;
    let lower_gap = stats::paired_difference(&legs[1], &legs[0]);
    let upper_gap = stats::paired_difference(&legs[2], &legs[1]);
    Ok(SandwichReport {
        under: Estimate::from_samples(&legs[0]).in_log_domain(),
        tilted: Estimate::from_samples(&legs[1]).in_log_domain(),
        over: Estimate::from_samples(&legs[2]).in_log_domain(),
        lower_holds: lower_gap.value >= -SIGMA_SLACK * lower_gap.std_error,
        upper_holds: upper_gap.value >= -SIGMA_SLACK * upper_gap.std_error,
        lower_gap,
        upper_gap,
        bounds,
        horizon,
        n_env,
        excluded,
        radius,
    })
}

/// `E[log Z^{kv1}]` against `E[log Z^{kv1 + kv2}]`.
///
/// The law of the `kv1 + kv2` walk is the law of a `kv1` walk plus an
/// independent `kv2` walk, so for concave `f` (here `log`) the faster walk has
/// the larger `E[f(Z)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kv1: RateVector,
    pub kv2: RateVector,
    /// `E[log Z^{kv1+kv2}_T]`.
    pub sum_leg: Estimate,
    /// `E[log Z^{kv1}_T]`.
    pub base_leg: Estimate,
    /// Paired `sum_leg - base_leg`; should be `>= 0`.
    pub difference: Estimate,
    /// Bound on how far box truncation can lower the difference.
    pub truncation_slack: f64,
    pub holds: bool,
    pub horizon: f64,
    pub n_env: usize,
    pub excluded: usize,
    pub radius: u32,
}

pub fn comparison_check(
    params: &EnvironmentParams,
    kv1: &RateVector,
    kv2: &RateVector,
    horizon: f64,
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<ComparisonReport> {
    let sum = kv1.plus(kv2)?;
    let (legs, excluded, radius) = shared_free_energies(params, &[sum.clone(), kv1.clone()], horizon, n_env, seed, opts)?;
    let scale = |v: &[f64]| v.iter().map(|x| x * horizon).collect::<Vec<_>>();
    let (a, b) = (scale(&legs[0]), scale(&legs[1]));
    let difference = stats::paired_difference(&a, &b);
    // each leg loses at most its exit probability of mass: -log(1 - p)
    let truncation_slack: f64 =
        [&sum, kv1].iter().map(|kv| -(-ctrw::box_exit_bound(kv, horizon, radius)).ln_1p()).sum();
    Ok(ComparisonReport {
        kv1: kv1.clone(),
        kv2: kv2.clone(),
        sum_leg: Estimate::from_samples(&a).in_log_domain(),
        base_leg: Estimate::from_samples(&b).in_log_domain(),
        holds: difference.value >= -SIGMA_SLACK * difference.std_error - truncation_slack,
        difference,
        truncation_slack,
        horizon,
        n_env,
        excluded,
        radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderClass {
    ConsistentWithWeak,
    ConsistentWithStrong,
}

/// Finite-time behaviour of `W_t` over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderReport {
    pub times: Vec<f64>,
    pub median_log_w: Vec<f64>,
    /// Fraction of environments with `W_t < threshold`, one row per threshold.
    pub thresholds: Vec<f64>,
    pub fraction_below: Vec<Vec<f64>>,
    /// Least-squares slope of the median `log W_t` against `t`.
    pub slope: f64,
    pub classification: DisorderClass,
    pub caveat: String,
    pub n_env: usize,
    pub radius: u32,
}

/// Slopes above `-FLAT_SLOPE` count as flat.
pub const FLAT_SLOPE: f64 = 0.02;

pub fn disorder_diagnostic(
    params: &EnvironmentParams,
    kv: &RateVector,
    times: &[f64],
    n_env: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<DisorderReport> {
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    if times.is_empty() || times.iter().any(|&t| t <= 0.0) {
        return Err(PolymerError::InvalidParameter("time grid must be nonempty and positive".into()));
    }
    let alpha = params.alpha();
    let radius = opts.radius_for(&[kv], horizon);
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let solver = SolverOptions { record_fields: false, ..opts.solver.clone() };
    let rows = par::map_indexed(opts.exec, n_env, |i| -> Result<Vec<f64>> {
        let env = sample_environment(params, lbox, horizon, environment_seed(seed, 0, i as u64))?;
        let rec = solve_p2p(&env, kv, horizon, lbox, &solver, times)?;
        times.iter().map(|&t| Ok(rec.log_partition_function(t)? - alpha * t)).collect()
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let column = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let median_log_w: Vec<f64> = (0..times.len()).map(|k| stats::median(&column(k))).collect();
    let thresholds = vec![0.5, 0.1, 0.01];
    let fraction_below = thresholds
        .iter()
        .map(|&th: &f64| {
            (0..times.len())
                .map(|k| column(k).iter().filter(|&&lw| lw < th.ln()).count() as f64 / n_env as f64)
                .collect()
        })
        .collect();
    let slope = if times.len() >= 2 { stats::slope(times, &median_log_w) } else { f64::NAN };
    let classification =
        if slope > -FLAT_SLOPE { DisorderClass::ConsistentWithWeak } else { DisorderClass::ConsistentWithStrong };
    Ok(DisorderReport {
        times: times.to_vec(),
        median_log_w,
        thresholds,
        fraction_below,
        slope,
        classification,
        caveat: "finite-time heuristic on the median of log W_t; not an estimate of a critical value".into(),
        n_env,
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_env::Event;

    fn small_opts() -> EnsembleOptions {
        EnsembleOptions { escape_tolerance: 1e-10, ..Default::default() }
    }

    #[test]
    fn tilted_rates_match_isotropic_tilt() {
        let kv = RateVector::isotropic(2, 3.0).unwrap();
        let a = tilted_rates(&kv, &[0.2, -0.4]).unwrap();
        let b = ctrw::tilt(3.0, &[0.2, -0.4]).unwrap();
        for (x, y) in a.rates().iter().zip(b.rates()) {
            assert!((x - y).abs() < 1e-15 * x);
        }
    }

    #[test]
    fn cumulant_at_zero_lambda_is_exactly_zero() {
        let lbox = LatticeBox::new(1, 15).unwrap();
        let params = EnvironmentParams::from_preset("hard_obstacles(1)").unwrap();
        let env = sample_environment(&params, lbox, 2.0, 1).unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let v = empirical_cumulant(&env, &kv, &[0.0], 2.0, lbox, &SolverOptions::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn empty_environment_cumulant_is_the_walk_cumulant() {
        let lbox = LatticeBox::new(2, 25).unwrap();
        let env = sample_environment(&EnvironmentParams::empty(), lbox, 1.0, 1).unwrap();
        let kv = RateVector::isotropic(2, 1.0).unwrap();
        let lam = [0.3, -0.2];
        let v = empirical_cumulant(&env, &kv, &lam, 1.0, lbox, &SolverOptions::default()).unwrap();
        assert!((v - ctrw::cumulant(&kv, &lam)).abs() < 1e-8);
    }

    #[test]
    fn tilting_identity_with_obstacle_and_reward() {
        let lbox = LatticeBox::new(1, 40).unwrap();
        let params = EnvironmentParams::from_preset("hard_obstacles(1)+bernoulli_reward(1,1)").unwrap();
        let env = EnvironmentRealization::from_events(
            params,
            lbox,
            2.0,
            0,
            &[(vec![0], vec![Event { time: 0.4, mark: -1.0 }]), (vec![1], vec![Event { time: 1.1, mark: 1.0 }])],
        )
        .unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let r = tilting_identity_residual(&env, &kv, &[0.5], 2.0, lbox, &SolverOptions::default()).unwrap();
        assert!(r.residual < 1e-6, "{r:?}");
        let r0 = tilting_identity_residual(&env, &kv, &[0.0], 2.0, lbox, &SolverOptions::default()).unwrap();
        assert!(r0.residual < 1e-14);
    }

    #[test]
    fn sandwich_legs_coincide_at_zero_lambda() {
        let params = EnvironmentParams::hard_obstacles(1.0).unwrap();
        let rep = sandwich_check(&params, 1.0, &[0.0], 1.0, 6, 3, &small_opts()).unwrap();
        assert_eq!(rep.under, rep.tilted);
        assert_eq!(rep.tilted, rep.over);
        assert!(rep.holds());
    }

    #[test]
    fn free_walk_rate_estimate_matches_transition_probs() {
        let rep = quenched_rate_estimate(&EnvironmentParams::empty(), 1.0, &[0.5], 4.0, 3, 0, &small_opts()).unwrap();
        assert!((rep.j_hat.value - rep.free_walk_value).abs() < 1e-9);
        assert_eq!(rep.j_hat.std_error, 0.0);
        assert_eq!(rep.site, vec![2]);
    }

    #[test]
    fn empty_environment_is_weak() {
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let rep = disorder_diagnostic(&EnvironmentParams::empty(), &kv, &[1.0, 2.0, 4.0], 4, 0, &small_opts()).unwrap();
        assert_eq!(rep.classification, DisorderClass::ConsistentWithWeak);
        assert!(rep.median_log_w.iter().all(|lw| lw.abs() < 1e-9));
    }

    #[test]
    fn deterministic_comparison_is_flat() {
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let rep = comparison_check(&EnvironmentParams::empty(), &kv, &kv, 2.0, 4, 0, &small_opts()).unwrap();
        assert!(rep.difference.value.abs() < 1e-9);
        assert!(rep.holds);
    }
}
