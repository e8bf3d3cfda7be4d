//! The verification battery: oracles, exact identities and statistical
//! checks, each reported as a named pass/fail line with its metric.
//!
//! Every check computes a metric and compares it with a threshold (scaled by
//! [`VerifyConfig::tolerance_scale`], which exists so the harness itself can
//! be tested by injecting an impossible tolerance). A check also fails when it
//! overruns its time budget.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctrw::{self, RateVector};
use crate::error::Result;
use crate::lattice::LatticeBox;
use crate::ldp;
use crate::levy_env::{sample_environment, EnvironmentParams};
use crate::mc_polymer::{self, environment_seed, EnsembleOptions, Route};
use crate::oracle;
use crate::pam_solver::{solve_p2p, EventPlacement, SolverOptions};
use crate::par::{self, ExecMode};
use crate::seeding::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Reduced sample sizes; a few minutes in total.
    #[default]
    Quick,
    /// The sizes stated for acceptance.
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}` (expected quick or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub level: Level,
    pub seed: u64,
    /// Multiplies every threshold.
    pub tolerance_scale: f64,
    pub exec: ExecMode,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { level: Level::Quick, seed: 20_240_601, tolerance_scale: 1.0, exec: ExecMode::default() }
    }
}

impl VerifyConfig {
    fn pick(&self, quick: usize, full: usize) -> usize {
        match self.level {
            Level::Quick => quick,
            Level::Full => full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    /// The measured quantity; the check passes when `value <= threshold`.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub elapsed_s: f64,
    pub budget_s: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} value={:.3e} threshold={:.3e} time={:.2}s/{:.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.value,
            self.threshold,
            self.elapsed_s,
            self.budget_s,
            self.detail
        )
    }
}

/// `(id, name, time budget in seconds)` of every library-level check.
pub const CHECKS: [(u32, &str, f64); 10] = [
    (1, "rate-function-duality", 10.0),
    (2, "bessel-oracle", 1.0),
    (3, "convolution-identity", 10.0),
    (4, "tilting-identity", 120.0),
    (5, "annealed-identity", 300.0),
    (6, "hard-obstacle-closed-form", 10.0),
    (7, "comparison-inequality", 600.0),
    (8, "sandwich-inequality", 600.0),
    (9, "route-agreement", 600.0),
    (10, "disorder-trend-ordering", 1800.0),
];

struct Outcome {
    value: f64,
    threshold: f64,
    /// Extra condition beyond `value <= threshold`.
    ok: bool,
    detail: String,
}

impl Outcome {
    fn new(value: f64, threshold: f64, detail: String) -> Self {
        Outcome { value, threshold, ok: true, detail }
    }
}

/// Run one check by id.
pub fn run_check(id: u32, cfg: &VerifyConfig) -> CheckResult {
    let (_, name, budget) = *CHECKS.iter().find(|c| c.0 == id).expect("unknown check id");
    let start = Instant::now();
    let outcome = match id {
        1 => rate_duality(cfg),
        2 => bessel(cfg),
        3 => convolution(cfg),
        4 => tilting(cfg),
        5 => annealed(cfg),
        6 => hard_obstacle(cfg),
        7 => comparison(cfg),
        8 => sandwich(cfg),
        9 => route_agreement(cfg),
        10 => disorder_trend(cfg),
        _ => unreachable!(),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => {
            let threshold = o.threshold * cfg.tolerance_scale;
            let passed = o.ok && o.value <= threshold && elapsed_s <= budget;
            CheckResult { id, name: name.into(), passed, value: o.value, threshold, detail: o.detail, elapsed_s, budget_s: budget }
        }
        Err(e) => CheckResult {
            id,
            name: name.into(),
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: format!("error: {e}"),
            elapsed_s,
            budget_s: budget,
        },
    }
}

/// Run the checks in `ids` (all of them when empty).
pub fn run_all(cfg: &VerifyConfig, ids: &[u32]) -> Vec<CheckResult> {
    CHECKS.iter().filter(|c| ids.is_empty() || ids.contains(&c.0)).map(|c| run_check(c.0, cfg)).collect()
}

fn check_rng(cfg: &VerifyConfig, id: u64) -> seeding::StreamRng {
    seeding::rng(cfg.seed, &[0x5645_5249, id])
}

fn rate_duality(cfg: &VerifyConfig) -> Result<Outcome> {
    let mut rng = check_rng(cfg, 1);
    let n = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let d = rng.random_range(1..=3);
        let kappa = rng.random_range(0.1..=100.0);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let a = ctrw::rate_function_closed(kappa, &x);
        let b = ctrw::rate_function_legendre(kappa, &x);
        let scale = a.abs().max(b.abs());
        if scale > 0.0 {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(Outcome::new(worst, 1e-9, format!("max relative gap over {n} pairs")))
}

fn bessel(_cfg: &VerifyConfig) -> Result<Outcome> {
    let kv = RateVector::isotropic(1, 1.0)?;
    let lbox = LatticeBox::new(1, 30)?;
    let tp = ctrw::transition_probs(&kv, 1.0, lbox, 1e-14)?;
    let worst = (-10..=10)
        .map(|x: i32| (tp.field.get(&[x]).unwrap() - oracle::walk_probability_1d(1.0, 1.0, x as i64)).abs())
        .fold(0.0, f64::max);
    Ok(Outcome::new(worst, 1e-10, "max |P(X_1=x) - e^-1 I_x(1)| for |x| <= 10".into()))
}

fn convolution(_cfg: &VerifyConfig) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let cases = [
        (RateVector::new(1, vec![1.0, 0.4])?, RateVector::new(1, vec![0.3, 2.0])?),
        (RateVector::new(2, vec![1.0, 0.5, 0.7, 1.3])?, RateVector::new(2, vec![0.2, 0.9, 1.1, 0.4])?),
    ];
    for (k1, k2) in &cases {
        let sum = k1.plus(k2)?;
        let r = ctrw::certified_radius(&[&sum], 1.0, 1e-13);
        let small = LatticeBox::new(k1.dim(), r)?;
        let a = ctrw::transition_probs(k1, 1.0, small, 1e-14)?.field;
        let b = ctrw::transition_probs(k2, 1.0, small, 1e-14)?.field;
        let conv = oracle::convolve(&a, &b).restrict(small).expect("inner box");
        let direct = ctrw::transition_probs(&sum, 1.0, small, 1e-14)?.field;
        worst = worst.max(conv.max_abs_diff(&direct));
    }
    Ok(Outcome::new(worst, 1e-9, "max |P^{k1+k2} - P^k1 * P^k2| at t=1, d in {1,2}".into()))
}

fn mixed_params<R: Rng>(rng: &mut R) -> Result<EnvironmentParams> {
    let nu = rng.random_range(0.2..=1.0);
    let r = rng.random_range(0.2..=1.0);
    let nu2 = rng.random_range(0.2..=1.0);
    EnvironmentParams::from_preset(&format!("hard_obstacles({nu})+bernoulli_reward({r},{nu2})"))
}

fn tilting(cfg: &VerifyConfig) -> Result<Outcome> {
    let mut rng = check_rng(cfg, 4);
    let n = cfg.pick(20, 50);
    let instances: Vec<_> = (0..n)
        .map(|i| {
            let d = 1 + i % 2;
            let kappa = rng.random_range(0.5..=2.0);
            let lambda: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..=0.5)).collect();
            let horizon = rng.random_range(0.5..=2.0);
            (d, kappa, lambda, horizon, mixed_params(&mut rng), rng.random::<u64>())
        })
        .collect();
    let res: Vec<Result<f64>> = par::map_indexed(cfg.exec, n, |i| {
        let (d, kappa, lambda, horizon, params, seed) = &instances[i];
        let params = params.clone()?;
        let kv = RateVector::isotropic(*d, *kappa)?;
        let tilted = ldp::tilted_rates(&kv, lambda)?;
        let r = ctrw::certified_radius(&[&kv, &tilted], *horizon, 1e-10);
        let lbox = LatticeBox::new(*d, r)?;
        let env = sample_environment(&params, lbox, *horizon, *seed)?;
        let opts = SolverOptions { placement: EventPlacement::Exact, ..Default::default() };
        match ldp::tilting_identity_residual(&env, &kv, lambda, *horizon, lbox, &opts) {
            Ok(r) => Ok(r.residual),
            Err(crate::PolymerError::Extinct) => Ok(0.0),
            Err(e) => Err(e),
        }
    });
    let mut worst: f64 = 0.0;
    for r in res {
        worst = worst.max(r?);
    }
    Ok(Outcome::new(worst, 1e-6, format!("max relative residual over {n} instances")))
}

fn annealed(cfg: &VerifyConfig) -> Result<Outcome> {
    let n_env = cfg.pick(2000, 10_000);
    let kv = RateVector::isotropic(1, 1.0)?;
    let opts = EnsembleOptions { radius: Some(30), exec: cfg.exec, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (k, preset) in ["gaussian(1)", "bernoulli_reward(0.3,0.5)", "hard_obstacles(1)"].iter().enumerate() {
        let params = EnvironmentParams::from_preset(preset)?;
        let rep = mc_polymer::annealed_check(&params, &kv, 1.0, n_env, seeding::derive(cfg.seed, &[5, k as u64]), &opts)?;
        let z = rep.mean_w.z_score(1.0).abs();
        worst = worst.max(z);
        detail.push(format!("{preset}: W={:.4}+-{:.4}", rep.mean_w.value, rep.mean_w.std_error));
    }
    Ok(Outcome::new(worst, 4.0, format!("max |z| of mean W_1 vs 1, n_env={n_env}; {}", detail.join("; "))))
}

fn hard_obstacle(_cfg: &VerifyConfig) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for &(kappa, s) in &[(1.0, 0.5), (1.0, 1.3), (2.5, 0.4), (0.7, 1.9)] {
        let horizon = 2.0;
        let kv = RateVector::isotropic(1, kappa)?;
        let lbox = LatticeBox::new(1, ctrw::certified_radius(&[&kv], horizon, 1e-12))?;
        let params = EnvironmentParams::hard_obstacles(1.0)?;
        let env = crate::levy_env::EnvironmentRealization::from_events(
            params,
            lbox,
            horizon,
            0,
            &[(vec![0], vec![crate::levy_env::Event { time: s, mark: -1.0 }])],
        )?;
        let opts = SolverOptions { placement: EventPlacement::Exact, ..Default::default() };
        let z = solve_p2p(&env, &kv, horizon, lbox, &opts, &[])?.partition_function(horizon)?;
        worst = worst.max((z - (1.0 - oracle::bessel_i_scaled(0, kappa * s))).abs());
    }
    Ok(Outcome::new(worst, 1e-6, "max |Z_T - (1 - e^{-ks} I_0(ks))|".into()))
}

fn comparison(cfg: &VerifyConfig) -> Result<Outcome> {
    let n_env = cfg.pick(60, 200);
    let opts = EnsembleOptions { escape_tolerance: 1e-10, exec: cfg.exec, ..Default::default() };
    let cases = [
        ("hard_obstacles(1)", RateVector::isotropic(1, 1.0)?, RateVector::isotropic(1, 1.0)?, 4.0),
        ("bernoulli_reward(0.5,1)", RateVector::isotropic(1, 1.0)?, RateVector::isotropic(1, 0.5)?, 4.0),
        (
            "gaussian(0.5)+hard_obstacles(0.5)",
            RateVector::isotropic(2, 1.0)?,
            RateVector::new(2, vec![0.5, 1.0, 0.2, 0.3])?,
            2.0,
        ),
    ];
    let mut worst = f64::NEG_INFINITY;
    let mut detail = Vec::new();
    for (k, (preset, k1, k2, horizon)) in cases.iter().enumerate() {
        let params = EnvironmentParams::from_preset(preset)?;
        let rep = ldp::comparison_check(&params, k1, k2, *horizon, n_env, seeding::derive(cfg.seed, &[7, k as u64]), &opts)?;
        let z = -rep.difference.z_score(0.0);
        worst = worst.max(z);
        detail.push(format!("{preset}: diff={:.4}+-{:.4}", rep.difference.value, rep.difference.std_error));
    }
    Ok(Outcome::new(worst, ldp::SIGMA_SLACK, format!("max violation z of E log Z^k1 <= E log Z^(k1+k2); {}", detail.join("; "))))
}

fn sandwich(cfg: &VerifyConfig) -> Result<Outcome> {
    let n_env = cfg.pick(60, 200);
    let opts = EnsembleOptions { escape_tolerance: 1e-10, exec: cfg.exec, ..Default::default() };
    let cases: [(&str, f64, Vec<f64>); 2] =
        [("hard_obstacles(1)", 2.0, vec![0.3, 0.0]), ("bernoulli_reward(0.5,1)", 1.0, vec![0.4])];
    let mut worst = f64::NEG_INFINITY;
    let mut equal_at_zero = true;
    let mut detail = Vec::new();
    for (k, (preset, kappa, lambda)) in cases.iter().enumerate() {
        let params = EnvironmentParams::from_preset(preset)?;
        let seed = seeding::derive(cfg.seed, &[8, k as u64]);
        let rep = ldp::sandwich_check(&params, *kappa, lambda, 4.0, n_env, seed, &opts)?;
        worst = worst.max(-rep.lower_gap.z_score(0.0)).max(-rep.upper_gap.z_score(0.0));
        detail.push(format!(
            "{preset}: {:.4} <= {:.4} <= {:.4}",
            rep.under.value, rep.tilted.value, rep.over.value
        ));
        let zero = vec![0.0; lambda.len()];
        let rep0 = ldp::sandwich_check(&params, *kappa, &zero, 4.0, n_env.min(20), seed, &opts)?;
        equal_at_zero &= rep0.under.value == rep0.tilted.value && rep0.tilted.value == rep0.over.value;
    }
    let mut o = Outcome::new(
        worst,
        ldp::SIGMA_SLACK,
        format!("max violation z; equal at lambda=0: {equal_at_zero}; {}", detail.join("; ")),
    );
    o.ok = equal_at_zero;
    Ok(o)
}

fn route_agreement(cfg: &VerifyConfig) -> Result<Outcome> {
    let n = cfg.pick(40, 100);
    let n_paths = 4000;
    let mut rng = check_rng(cfg, 9);
    let instances: Vec<_> = (0..n)
        .map(|_| {
            let d = rng.random_range(1..=2);
            let kappa = rng.random_range(0.5..=2.0);
            let horizon = rng.random_range(0.5..=2.0);
            (d, kappa, horizon, mixed_params(&mut rng), rng.random::<u64>())
        })
        .collect();
    let agree: Vec<Result<bool>> = par::map_indexed(cfg.exec, n, |i| {
        let (d, kappa, horizon, params, seed) = &instances[i];
        let params = params.clone()?;
        let kv = RateVector::isotropic(*d, *kappa)?;
        let lbox = LatticeBox::new(*d, ctrw::certified_radius(&[&kv], *horizon, 1e-12))?;
        let env = sample_environment(&params, lbox, *horizon, environment_seed(*seed, 0, 0))?;
        let opts = SolverOptions { placement: EventPlacement::Exact, record_fields: false, ..Default::default() };
        let rec = solve_p2p(&env, &kv, *horizon, lbox, &opts, &[])?;
        let z = rec.partition_function(*horizon)?;
        let tol = rec.scheme.error_budget(z);
        let mc = mc_polymer::estimate_z(&env, &kv, *horizon, n_paths, seeding::derive(*seed, &[stream::PATHS]), ExecMode::Sequential)?;
        Ok((mc.value - z).abs() <= 4.0 * mc.std_error + tol)
    });
    let mut passed = 0usize;
    for a in agree {
        passed += usize::from(a?);
    }
    let failed_fraction = 1.0 - passed as f64 / n as f64;
    Ok(Outcome::new(failed_fraction, 0.05, format!("{passed}/{n} instances within 4 SE + solver tolerance")))
}

/// Median `log W_t` slopes for the two rates of the disorder-trend check.
pub fn disorder_slopes(cfg: &VerifyConfig) -> Result<(f64, f64)> {
    let n_env = cfg.pick(12, 100);
    let params = EnvironmentParams::hard_obstacles(1.0)?;
    let times = [2.0, 4.0, 8.0];
    let solver = SolverOptions { dt: 0.5, tolerance: 1e-10, record_fields: false, ..Default::default() };
    let opts = EnsembleOptions { escape_tolerance: 1e-4, solver, exec: cfg.exec, route: Route::Solver, ..Default::default() };
    let mut slopes = Vec::new();
    for (k, kappa) in [0.5, 40.0].into_iter().enumerate() {
        let kv = RateVector::isotropic(3, kappa)?;
        let rep = ldp::disorder_diagnostic(&params, &kv, &times, n_env, seeding::derive(cfg.seed, &[10, k as u64]), &opts)?;
        slopes.push(rep.slope);
    }
    Ok((slopes[0], slopes[1]))
}

fn disorder_trend(cfg: &VerifyConfig) -> Result<Outcome> {
    let (low, high) = disorder_slopes(cfg)?;
    let mut o = Outcome::new(
        low - high,
        0.0,
        format!("slope of median log W_t: kappa=0.5 {low:.4}, kappa=40 {high:.4}"),
    );
    o.ok = high > low;
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        let cfg = VerifyConfig::default();
        for id in [1, 2, 3, 6] {
            let r = run_check(id, &cfg);
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn injected_tolerance_fails_by_name() {
        let cfg = VerifyConfig { tolerance_scale: 1e-300, ..Default::default() };
        let r = run_check(1, &cfg);
        assert!(!r.passed);
        assert_eq!(r.name, "rate-function-duality");
        assert!(r.line().starts_with("[FAIL]"));
    }

    #[test]
    fn level_parses() {
        assert_eq!("full".parse::<Level>(), Ok(Level::Full));
        assert!("slow".parse::<Level>().is_err());
    }
}
