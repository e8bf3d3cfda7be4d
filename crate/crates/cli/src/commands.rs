//! Subcommand bodies. Each one validates, computes, then writes its files.

use std::fmt::Write as _;

use anyhow::Result;
use polymer_core::ctrw::{self, RateVector};
use polymer_core::lattice::LatticeBox;
use polymer_core::ldp;
use polymer_core::levy_env::sample_environment;
use polymer_core::mc_polymer::{self, environment_seed};
use polymer_core::pam_solver::{default_record_grid, escape_bound, solve_p2p};
use polymer_core::par::ExecMode;
use polymer_core::stats::Estimate;
use polymer_core::verify::{self, CheckResult, VerifyConfig, CHECKS};
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentKind, RunConfig};
use crate::manifest::OutputSet;

/// What a command reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// `false` when a check or inequality failed; the exit code becomes 1.
    pub passed: bool,
    pub summary: String,
}

fn csv_header(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}_{i},")).collect()
}

fn csv_vec<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|c| format!("{c},")).collect()
}

fn est(e: &Estimate) -> String {
    format!("{},{}", e.value, e.std_error)
}

// ---------------------------------------------------------------- rate-table

pub fn rate_table_csv(cfg: &RunConfig) -> Result<String, ConfigError> {
    let rt = &cfg.rate_table;
    let d = cfg.walk.dim;
    if rt.kappas.is_empty() || rt.kappas.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
        return Err(ConfigError(format!("kappas {:?} must be nonempty and positive", rt.kappas)));
    }
    if rt.points == 0 || !rt.x_min.is_finite() || !rt.x_max.is_finite() || rt.x_min > rt.x_max {
        return Err(ConfigError("the grid needs points >= 1 and finite x_min <= x_max".into()));
    }
    let rows = rt.points.checked_pow(d as u32).filter(|&n| n <= 1_000_000);
    let Some(rows) = rows else {
        return Err(ConfigError(format!("{}^{d} grid points is more than 10^6", rt.points)));
    };
    let axis: Vec<f64> = (0..rt.points)
        .map(|i| if rt.points == 1 { rt.x_min } else { rt.x_min + (rt.x_max - rt.x_min) * i as f64 / (rt.points - 1) as f64 })
        .collect();
    let mut s = format!("kappa,{}I_closed,I_legendre,abs_diff\n", csv_header("x", d));
    for &kappa in &rt.kappas {
        for r in 0..rows {
            let mut idx = r;
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let v = axis[idx % rt.points];
                    idx /= rt.points;
                    v
                })
                .collect();
            let a = ctrw::rate_function_closed(kappa, &x);
            let b = ctrw::rate_function_legendre(kappa, &x);
            writeln!(s, "{kappa},{}{a},{b},{:e}", csv_vec(&x), (a - b).abs()).unwrap();
        }
    }
    Ok(s)
}

pub fn cmd_rate_table(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate_common()?;
    let csv = rate_table_csv(cfg)?;
    let max_diff = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next()?.parse::<f64>().ok())
        .fold(0.0, f64::max);
    let mut out = OutputSet::create(&cfg.run.out)?;
    out.write("rate_table.csv", &csv)?;
    out.finish("rate-table", cfg, json!({ "max_abs_diff": max_diff }))?;
    Ok(Outcome { passed: true, summary: format!("rate table written; max |closed - legendre| = {max_diff:e}") })
}

// --------------------------------------------------------------------- solve

pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate_common()?;
    let horizon = cfg.experiment.horizon;
    cfg.validate_horizons(&[horizon])?;
    for &t in &cfg.experiment.field_times {
        if !(t >= 0.0 && t <= horizon) {
            return Err(ConfigError(format!("field time {t} is outside [0, {horizon}]")).into());
        }
    }
    let params = cfg.params()?;
    let kv = cfg.kv()?;
    let radius = cfg.radius_for(&[&kv], horizon)?;
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let env_seed = environment_seed(cfg.run.seed, 0, 0);
    let env = sample_environment(&params, lbox, horizon, env_seed)?;
    let mut grid = default_record_grid(horizon);
    grid.extend(&cfg.experiment.field_times);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let rec = solve_p2p(&env, &kv, horizon, lbox, &cfg.solver_options(ExecMode::Parallel), &grid)?;
    let log_z = rec.log_partition_function(horizon)?;

    let mut out = OutputSet::create(&cfg.run.out)?;
    out.write("solve.csv", &rec.to_csv())?;
    let field_times = if cfg.experiment.field_times.is_empty() { vec![horizon] } else { cfg.experiment.field_times.clone() };
    for (k, &t) in field_times.iter().enumerate() {
        out.write(&format!("field_{k}.csv"), &rec.field_csv(t)?)?;
    }
    out.write_json(
        "solve.json",
        &json!({
            "params": params,
            "environment_seed": env_seed,
            "total_events": env.total_events(),
            "times": rec.times,
            "log_z": rec.log_z,
            "alpha": rec.alpha,
            "field_times": field_times,
            "scheme": rec.scheme,
        }),
    )?;
    let derived = json!({
        "alpha": params.alpha(),
        "radius": radius,
        "certified_radius": ctrw::certified_radius(&[&kv], horizon, cfg.solver.escape_tolerance),
        "escape_bound": escape_bound(&kv, horizon, radius),
        "log_z": log_z,
        "error_budget": rec.scheme.error_budget(log_z.exp()),
    });
    out.finish("solve", cfg, derived)?;
    Ok(Outcome { passed: true, summary: format!("log Z_T = {log_z} (T = {horizon}, radius {radius})") })
}

// ---------------------------------------------------------------- env-sample

pub fn cmd_env_sample(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate_common()?;
    let horizon = cfg.experiment.horizon;
    cfg.validate_horizons(&[horizon])?;
    let params = cfg.params()?;
    let kv = cfg.kv()?;
    let radius = cfg.radius_for(&[&kv], horizon)?;
    let lbox = LatticeBox::new(kv.dim(), radius)?;
    let env = sample_environment(&params, lbox, horizon, environment_seed(cfg.run.seed, 0, 0))?;
    let d = lbox.dim();
    let mut csv = format!("{}time,mark\n", csv_header("x", d));
    for (i, x) in lbox.sites().enumerate() {
        for e in env.events_at_index(i) {
            writeln!(csv, "{}{},{}", csv_vec(&x), e.time, e.mark).unwrap();
        }
    }
    let mut out = OutputSet::create(&cfg.run.out)?;
    out.write("environment.json", &env.to_json())?;
    out.write("events.csv", &csv)?;
    let derived = json!({ "alpha": params.alpha(), "radius": radius, "total_events": env.total_events() });
    out.finish("env-sample", cfg, derived)?;
    Ok(Outcome { passed: true, summary: format!("{} events on a box of radius {radius}", env.total_events()) })
}

// ------------------------------------------------------------------ ensemble

/// Tables and report of one ensemble experiment, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub csv: String,
    pub report: Value,
    pub derived: Value,
    pub passed: bool,
}

fn isotropic_kappa(cfg: &RunConfig, kv: &RateVector) -> Result<f64, ConfigError> {
    if !kv.is_isotropic() {
        return Err(ConfigError(format!("the {} experiment needs an isotropic walk (use --kappa)", cfg.experiment.kind.name())));
    }
    Ok(kv.total_rate())
}

pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleOutput> {
    cfg.validate_common()?;
    let e = &cfg.experiment;
    if e.n_env < 2 {
        return Err(ConfigError(format!("n_env = {} must be at least 2", e.n_env)).into());
    }
    let params = cfg.params()?;
    let kv = cfg.kv()?;
    let d = kv.dim();
    let seed = cfg.run.seed;
    let opts = cfg.ensemble_options();
    let horizon = e.horizon;
    let mut derived = json!({ "alpha": params.alpha() });
    let mut passed = true;
    let (csv, results) = match e.kind {
        ExperimentKind::FreeEnergy => {
            let hs = cfg.horizons();
            cfg.validate_horizons(&hs)?;
            let tmax = hs.iter().cloned().fold(0.0, f64::max);
            derived["radius"] = json!(cfg.radius_for(&[&kv], tmax)?);
            let rows = mc_polymer::free_energy_mc(&params, &kv, &hs, e.n_env, seed, &opts)?;
            (mc_polymer::free_energy_csv(&rows), json!(rows))
        }
        ExperimentKind::Annealed => {
            cfg.validate_horizons(&[horizon])?;
            cfg.radius_for(&[&kv], horizon)?;
            let r = mc_polymer::annealed_check(&params, &kv, horizon, e.n_env, seed, &opts)?;
            let z = r.mean_w.z_score(1.0);
            passed = r.mean_w.within(1.0, 4.0, 0.0);
            derived["radius"] = json!(r.radius);
            let csv = format!(
                "T,alpha,rate,rate_se,mean_w,mean_w_se,z_score,n,radius\n{},{},{},{},{},{},{}\n",
                r.horizon,
                r.alpha,
                est(&r.rate),
                est(&r.mean_w),
                z,
                r.mean_w.n,
                r.radius
            );
            (csv, json!(r))
        }
        ExperimentKind::Cumulant => {
            cfg.validate_horizons(&[horizon])?;
            let lambdas = cfg.lambdas();
            cfg.validate_vectors(&lambdas, "lambda")?;
            let tilted = lambdas.iter().map(|l| ldp::tilted_rates(&kv, l)).collect::<Result<Vec<_>, _>>()?;
            let mut all: Vec<&RateVector> = tilted.iter().collect();
            all.push(&kv);
            derived["radius"] = json!(cfg.radius_for(&all, horizon)?);
            let mut csv = format!("{}lambda_hat,std_error,lambda_walk,T,n,excluded\n", csv_header("lambda", d));
            let mut rows = Vec::new();
            for l in &lambdas {
                let c = ldp::ensemble_cumulant(&params, &kv, l, horizon, e.n_env, seed, &opts)?;
                writeln!(csv, "{}{},{},{},{},{}", csv_vec(l), est(&c.lambda_hat), c.lambda_walk, c.horizon, c.n_env, c.excluded)
                    .unwrap();
                rows.push(c);
            }
            derived["walk_cumulant"] = json!(lambdas.iter().map(|l| ctrw::cumulant(&kv, l)).collect::<Vec<_>>());
            (csv, json!(rows))
        }
        ExperimentKind::Rate => {
            cfg.validate_horizons(&[horizon])?;
            let kappa = isotropic_kappa(cfg, &kv)?;
            let xs = cfg.velocities();
            cfg.validate_vectors(&xs, "x")?;
            let radius = cfg.radius_for(&[&kv], horizon)?;
            for x in &xs {
                if x.iter().any(|c| (c * horizon).round().abs() > radius as f64) {
                    return Err(ConfigError(format!("endpoint T*x for x = {x:?} lies outside the box of radius {radius}")).into());
                }
            }
            derived["radius"] = json!(radius);
            let mut csv = format!("{}{}J_hat,std_error,I,free_walk,T,n,excluded\n", csv_header("x", d), csv_header("site", d));
            let mut rows = Vec::new();
            for x in &xs {
                let r = ldp::quenched_rate_estimate(&params, kappa, x, horizon, e.n_env, seed, &opts)?;
                writeln!(
                    csv,
                    "{}{}{},{},{},{},{},{}",
                    csv_vec(&r.x),
                    csv_vec(&r.site),
                    est(&r.j_hat),
                    r.i_value,
                    r.free_walk_value,
                    r.horizon,
                    r.n_env,
                    r.excluded
                )
                .unwrap();
                rows.push(r);
            }
            (csv, json!(rows))
        }
        ExperimentKind::Sandwich => {
            cfg.validate_horizons(&[horizon])?;
            let kappa = isotropic_kappa(cfg, &kv)?;
            let lambdas = cfg.lambdas();
            cfg.validate_vectors(&lambdas, "lambda")?;
            let mut need = Vec::new();
            for l in &lambdas {
                let b = ctrw::kappa_bounds(kappa, l)?;
                need.push(b.over()?);
                need.push(b.tilted.clone());
            }
            derived["radius"] = json!(cfg.radius_for(&need.iter().collect::<Vec<_>>(), horizon)?);
            let mut csv = format!(
                "{}kappa_under,kappa_over,under,under_se,tilted,tilted_se,over,over_se,lower_holds,upper_holds,n,excluded\n",
                csv_header("lambda", d)
            );
            let mut rows = Vec::new();
            for l in &lambdas {
                let r = ldp::sandwich_check(&params, kappa, l, horizon, e.n_env, seed, &opts)?;
                passed &= r.holds();
                writeln!(
                    csv,
                    "{}{},{},{},{},{},{},{},{},{}",
                    csv_vec(l),
                    r.bounds.kappa_under,
                    r.bounds.kappa_over,
                    est(&r.under),
                    est(&r.tilted),
                    est(&r.over),
                    r.lower_holds,
                    r.upper_holds,
                    r.n_env,
                    r.excluded
                )
                .unwrap();
                rows.push(r);
            }
            (csv, json!(rows))
        }
        ExperimentKind::Comparison => {
            cfg.validate_horizons(&[horizon])?;
            let kv2 = cfg.kv2()?;
            let sum = kv.plus(&kv2)?;
            derived["radius"] = json!(cfg.radius_for(&[&kv, &sum], horizon)?);
            let r = ldp::comparison_check(&params, &kv, &kv2, horizon, e.n_env, seed, &opts)?;
            passed = r.holds;
            let csv = format!(
                "kappa1,kappa2,sum_leg,sum_se,base_leg,base_se,difference,difference_se,holds,n,excluded\n{},{},{},{},{},{},{},{}\n",
                kv.total_rate(),
                kv2.total_rate(),
                est(&r.sum_leg),
                est(&r.base_leg),
                est(&r.difference),
                r.holds,
                r.n_env,
                r.excluded
            );
            (csv, json!(r))
        }
        ExperimentKind::Disorder => {
            let ts = e.times.clone();
            cfg.validate_horizons(&ts)?;
            if ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError("disorder times must be increasing".into()).into());
            }
            derived["radius"] = json!(cfg.radius_for(&[&kv], *ts.last().unwrap())?);
            let r = ldp::disorder_diagnostic(&params, &kv, &ts, e.n_env, seed, &opts)?;
            let mut csv = String::from("t,median_log_w");
            for th in &r.thresholds {
                write!(csv, ",frac_below_{th}").unwrap();
            }
            csv.push('\n');
            for (k, t) in r.times.iter().enumerate() {
                write!(csv, "{t},{}", r.median_log_w[k]).unwrap();
                for row in &r.fraction_below {
                    write!(csv, ",{}", row[k]).unwrap();
                }
                csv.push('\n');
            }
            derived["slope"] = json!(r.slope);
            (csv, json!(r))
        }
    };
    let report = json!({
        "kind": e.kind,
        "seed": seed,
        "params": params,
        "rates": kv.rates(),
        "options": opts,
        "passed": passed,
        "results": results,
    });
    Ok(EnsembleOutput { csv, report, derived, passed })
}

pub fn cmd_ensemble(cfg: &RunConfig) -> Result<Outcome> {
    let res = run_ensemble(cfg)?;
    let name = cfg.experiment.kind.name();
    let mut out = OutputSet::create(&cfg.run.out)?;
    out.write(&format!("{name}.csv"), &res.csv)?;
    out.write_json(&format!("{name}.json"), &res.report)?;
    out.finish("ensemble", cfg, res.derived)?;
    let verdict = if res.passed { "" } else { " (inequality check FAILED)" };
    Ok(Outcome { passed: res.passed, summary: format!("{name} ensemble written to {}{verdict}", cfg.run.out.display()) })
}

// -------------------------------------------------------------------- verify

pub const DETERMINISM_ID: u32 = 11;

/// The small ensemble used by the determinism check.
pub fn determinism_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.seed = seed;
    cfg.environment.preset = "hard_obstacles(0.5) + gaussian(0.3)".into();
    cfg.walk.dim = 2;
    cfg.walk.kappa = 1.0;
    cfg.experiment.horizons = vec![0.5, 1.0];
    cfg.experiment.n_env = 16;
    cfg.solver.escape_tolerance = 1e-8;
    cfg
}

/// Run the same ensemble sequentially and on pools of one and four threads;
/// all CSVs must agree byte for byte.
pub fn determinism_check(seed: u64) -> CheckResult {
    let start = std::time::Instant::now();
    let cfg = determinism_config(seed);
    let run = |exec: ExecMode, threads: usize| -> Result<String> {
        in_pool(threads, || {
            let mut opts = cfg.ensemble_options();
            opts.exec = exec;
            let rows =
                mc_polymer::free_energy_mc(&cfg.params()?, &cfg.kv()?, &cfg.horizons(), cfg.experiment.n_env, cfg.run.seed, &opts)?;
            Ok(mc_polymer::free_energy_csv(&rows))
        })
    };
    let outcome = (|| -> Result<(bool, String)> {
        let seq = run(ExecMode::Sequential, 1)?;
        let one = run(ExecMode::Parallel, 1)?;
        let four = run(ExecMode::Parallel, 4)?;
        let same = seq == one && one == four;
        Ok((same, format!("sequential/1-thread/4-thread CSVs {} ({} bytes)", if same { "identical" } else { "differ" }, seq.len())))
    })();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id: DETERMINISM_ID,
        name: "determinism-across-threads".into(),
        passed,
        value: if passed { 0.0 } else { 1.0 },
        threshold: 0.0,
        detail,
        elapsed_s: start.elapsed().as_secs_f64(),
        budget_s: 60.0,
    }
}

#[cfg(feature = "parallel")]
fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool").install(f)
}

#[cfg(not(feature = "parallel"))]
fn in_pool<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let v = &cfg.verify;
    if !(v.tolerance_scale > 0.0) || !v.tolerance_scale.is_finite() {
        return Err(ConfigError(format!("tolerance scale {} must be positive", v.tolerance_scale)).into());
    }
    let known: Vec<u32> = CHECKS.iter().map(|c| c.0).chain([DETERMINISM_ID]).collect();
    let ids = if v.checks.is_empty() { known.clone() } else { v.checks.clone() };
    if let Some(bad) = ids.iter().find(|i| !known.contains(i)) {
        return Err(ConfigError(format!("unknown check id {bad}")).into());
    }
    let vc = VerifyConfig { level: v.level, seed: v.seed, tolerance_scale: v.tolerance_scale, exec: ExecMode::Parallel };
    let mut results = Vec::new();
    for &id in &ids {
        let r = if id == DETERMINISM_ID { determinism_check(v.seed) } else { verify::run_check(id, &vc) };
        println!("{}", r.line());
        results.push(r);
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{} {}", r.id, r.name)).collect();
    let passed = failed.is_empty();
    let mut out = OutputSet::create(&cfg.run.out)?;
    out.write_json(
        "verify.json",
        &json!({ "level": v.level, "seed": v.seed, "tolerance_scale": v.tolerance_scale, "passed": passed, "checks": results }),
    )?;
    out.finish("verify", cfg, json!({ "failed": failed }))?;
    let summary = if passed {
        format!("all {} checks passed", results.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", "))
    };
    Ok(Outcome { passed, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_table_has_zero_row_and_symmetry() {
        let cfg = RunConfig::default();
        let csv = rate_table_csv(&cfg).unwrap();
        let rows: Vec<Vec<f64>> =
            csv.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 27);
        for r in &rows {
            assert!(r[4] < 1e-9, "{r:?}");
            if r[1] == 0.0 {
                assert_eq!(r[2], 0.0);
            }
            let mirror = rows.iter().find(|m| m[0] == r[0] && m[1] == -r[1]).unwrap();
            assert_eq!(mirror[2], r[2]);
        }
    }

    #[test]
    fn rate_table_rejects_bad_grid() {
        let mut cfg = RunConfig::default();
        cfg.rate_table.kappas = vec![-1.0];
        assert!(rate_table_csv(&cfg).is_err());
        let mut cfg = RunConfig::default();
        cfg.rate_table.points = 0;
        assert!(rate_table_csv(&cfg).is_err());
    }

    #[test]
    fn empty_environment_free_energy_is_zero() {
        let mut cfg = RunConfig::default();
        cfg.environment.preset = "empty".into();
        cfg.experiment.n_env = 4;
        cfg.experiment.horizons = vec![1.0];
        cfg.solver.escape_tolerance = 1e-10;
        let out = run_ensemble(&cfg).unwrap();
        let row: Vec<&str> = out.csv.lines().nth(1).unwrap().split(',').collect();
        assert!(row[1].parse::<f64>().unwrap().abs() < 1e-9, "{}", out.csv);
    }

    #[test]
    fn zero_lambda_cumulant_row_is_exactly_zero() {
        let mut cfg = RunConfig::default();
        cfg.environment.preset = "hard_obstacles(0.5)".into();
        cfg.experiment.kind = ExperimentKind::Cumulant;
        cfg.experiment.n_env = 4;
        cfg.experiment.horizon = 1.0;
        cfg.experiment.lambda = vec![vec![0.0], vec![0.3]];
        cfg.solver.escape_tolerance = 1e-10;
        let out = run_ensemble(&cfg).unwrap();
        let row: Vec<&str> = out.csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[1], "0");
        assert_eq!(row[2], "0");
    }

    #[test]
    fn determinism_check_passes() {
        let r = determinism_check(3);
        assert!(r.passed, "{}", r.detail);
    }

    #[test]
    fn anisotropic_rate_experiment_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.experiment.kind = ExperimentKind::Rate;
        cfg.walk.rates = Some(vec![1.0, 0.5]);
        let err = run_ensemble(&cfg).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }
}
