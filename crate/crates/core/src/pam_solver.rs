//! Point-to-point partition functions `u(t, x) = Z_{t,x}` on a Dirichlet box.
//!
//! The solver integrates the Feynman–Kac form directly: the field is moved by
//! the exact heat semigroup of the walk (uniformization) and multiplied, site
//! by site, by the weight factors of the environment. Jump events multiply by
//! `1 + r` (a hard obstacle zeroes the site); the Gaussian part multiplies by
//! `exp(sigma dB)` at the end of every step, with no Itô correction.
//!
//! The field is stored as `values * exp(log_scale)` and renormalized whenever
//! its maximum leaves `[1e-100, 1e100]`.

use serde::{Deserialize, Serialize};

use crate::ctrw::{self, RateVector};
use crate::error::{PolymerError, Result};
use crate::lattice::{pairwise_sum, Field, LatticeBox};
use crate::levy_env::EnvironmentRealization;
use crate::par::ExecMode;
use crate::semigroup::JumpKernel;

/// How jump events inside a step are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventPlacement {
    /// Diffuse up to every event time and apply events there.
    Exact,
    /// Apply all events of a step between two half-steps of diffusion.
    Midpoint,
    /// `Exact` while there are at most two distinct event times per step,
    /// `Midpoint` otherwise (each distinct event time costs one semigroup
    /// application in exact mode).
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Step size; the grid is `k * dt` merged with the recording times.
    pub dt: f64,
    /// Poisson tail tolerance for every semigroup application.
    pub tolerance: f64,
    pub placement: EventPlacement,
    pub exec: ExecMode,
    /// Keep `u(t, .)` at every recorded time (needed for endpoint laws).
    pub record_fields: bool,
    /// Escape bounds above this set the warning flag of the record.
    pub escape_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            dt: 1.0 / 16.0,
            tolerance: 1e-12,
            placement: EventPlacement::Auto,
            exec: ExecMode::default(),
            record_fields: true,
            escape_tolerance: 1e-9,
        }
    }
}

/// A field stored as `values * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledField {
    pub values: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledField {
    pub fn log_sum(&self) -> f64 {
        let s = pairwise_sum(&self.values);
        if s > 0.0 {
            s.ln() + self.log_scale
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Scheme metadata carried by a [`SolveRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeInfo {
    pub lattice_box: LatticeBox,
    pub rates: RateVector,
    pub horizon: f64,
    pub dt: f64,
    pub placement: EventPlacement,
    pub splitting: String,
    pub tolerance: f64,
    /// Sum of the Poisson tails of all semigroup applications (relative l1 error).
    pub truncation_bound: f64,
    /// Bound on the probability that the walk leaves the box before the horizon.
    pub escape_bound: f64,
    pub escape_warning: bool,
    pub semigroup_applications: usize,
    pub events_applied: usize,
}

impl SchemeInfo {
    /// Absolute error budget for `Z_t` of size `z`: series truncation plus box escape.
    pub fn error_budget(&self, z: f64) -> f64 {
        z * self.truncation_bound + self.escape_bound
    }
}

/// Output of [`solve_p2p`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub times: Vec<f64>,
    /// `log Z_t` at every recorded time (`-inf` once extinct).
    pub log_z: Vec<f64>,
    /// `u(t, .)` at every recorded time, if requested.
    pub fields: Vec<ScaledField>,
    /// Annealed exponent of the environment that was solved.
    pub alpha: f64,
    pub scheme: SchemeInfo,
}

/// Default recording grid: the integers in `(0, horizon)` plus `0` and `horizon`.
pub fn default_record_grid(horizon: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    let mut k = 1.0;
    while k < horizon {
        g.push(k);
        k += 1.0;
    }
    g.push(horizon);
    g
}

/// Bound on the probability that a walk with rates `kv` makes more than
/// `radius` jumps by time `t` (Poisson Chernoff tail).
pub fn escape_bound(kv: &RateVector, t: f64, radius: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ctrw::jump_count_tail(kv.total_rate() * t, radius as f64 + 1.0)
}

/// Solve for `u(t, .)` from `u(0, .) = 1_{0}` up to `horizon`.
///
/// `record` lists the times at which `Z_t` (and optionally the field) is
/// kept; `0` and `horizon` are always added.
pub fn solve_p2p(
    env: &EnvironmentRealization,
    kv: &RateVector,
    horizon: f64,
    lbox: LatticeBox,
    opts: &SolverOptions,
    record: &[f64],
) -> Result<SolveRecord> {
    if !(horizon > 0.0 && horizon <= env.horizon()) {
        return Err(PolymerError::InvalidParameter(format!(
            "solve horizon {horizon} must lie in (0, {}]",
            env.horizon()
        )));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(PolymerError::InvalidParameter(format!("step {} must be positive", opts.dt)));
    }
    if kv.dim() != lbox.dim() {
        return Err(PolymerError::InvalidParameter("rate vector and box dimensions differ".into()));
    }
    let env_sites = env.lattice_box().embedding(&lbox).ok_or_else(|| {
        PolymerError::InvalidParameter(format!(
            "environment box (d={}, R={}) does not cover the solver box (d={}, R={})",
            env.lattice_box().dim(),
            env.lattice_box().radius(),
            lbox.dim(),
            lbox.radius()
        ))
    })?;
    Solver::new(env, kv, horizon, lbox, opts, env_sites).run(record)
}

struct Solver<'a> {
    env: &'a EnvironmentRealization,
    kernel: JumpKernel,
    rates: RateVector,
    horizon: f64,
    opts: &'a SolverOptions,
    env_sites: Vec<usize>,
    u: Vec<f64>,
    log_scale: f64,
    pending: f64,
    extinct: bool,
    truncation: f64,
    applications: usize,
    events_applied: usize,
}

impl<'a> Solver<'a> {
    fn new(
        env: &'a EnvironmentRealization,
        kv: &RateVector,
        horizon: f64,
        lbox: LatticeBox,
        opts: &'a SolverOptions,
        env_sites: Vec<usize>,
    ) -> Self {
        Solver {
            env,
            kernel: JumpKernel::new(lbox, kv.rates()),
            rates: kv.clone(),
            horizon,
            opts,
            env_sites,
            u: Field::delta_origin(lbox).values,
            log_scale: 0.0,
            pending: 0.0,
            extinct: false,
            truncation: 0.0,
            applications: 0,
            events_applied: 0,
        }
    }

    fn flush(&mut self) {
        if self.pending > 0.0 && !self.extinct {
            self.truncation += self.kernel.evolve(&mut self.u, self.pending, self.opts.tolerance, self.opts.exec);
            self.applications += 1;
        }
        self.pending = 0.0;
    }

    fn renormalize(&mut self, t: f64) -> Result<()> {
        if self.extinct {
            return Ok(());
        }
        let mut max = 0.0_f64;
        for &v in &self.u {
            if !v.is_finite() {
                return Err(PolymerError::NonFinite { time: t });
            }
            max = max.max(v);
        }
        if max == 0.0 {
            self.extinct = true;
            return Ok(());
        }
        if !(1e-100..=1e100).contains(&max) {
            let inv = 1.0 / max;
            self.u.iter_mut().for_each(|v| *v *= inv);
            self.log_scale += max.ln();
        }
        Ok(())
    }

    fn snapshot(&self) -> ScaledField {
        ScaledField { values: self.u.clone(), log_scale: self.log_scale }
    }

    fn run(mut self, record: &[f64]) -> Result<SolveRecord> {
        let lbox = self.kernel.lattice_box();
        let mut rec_times: Vec<f64> = record.iter().cloned().filter(|&t| t > 0.0 && t < self.horizon).collect();
        rec_times.push(0.0);
        rec_times.push(self.horizon);
        rec_times.sort_by(f64::total_cmp);
        rec_times.dedup();
        let grid = step_grid(self.horizon, self.opts.dt, &rec_times);

        // events inside the solver box up to the horizon, time-ordered
        let mut events: Vec<(f64, usize, f64)> = Vec::new();
        for (s, &e) in self.env_sites.iter().enumerate() {
            for ev in self.env.events_at_index(e) {
                if ev.time <= self.horizon {
                    events.push((ev.time, s, ev.mark));
                }
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let placement = match self.opts.placement {
            EventPlacement::Auto if events.len() > 2 * (grid.len() - 1) => EventPlacement::Midpoint,
            EventPlacement::Auto => EventPlacement::Exact,
            p => p,
        };
        let gaussian = self.env.sigma2() > 0.0;
        let mut b_prev = vec![0.0; lbox.len()];

        let mut times = vec![0.0];
        let mut log_z = vec![0.0];
        let mut fields = Vec::new();
        if self.opts.record_fields {
            fields.push(self.snapshot());
        }
        let mut next_event = 0usize;
        let mut rec_idx = 1usize;

        for w in grid.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let step_end = events[next_event..].partition_point(|e| e.0 <= t1) + next_event;
            let in_step = &events[next_event..step_end];
            match placement {
                EventPlacement::Exact => {
                    let mut cur = t0;
                    let mut i = 0;
                    while i < in_step.len() {
                        let s = in_step[i].0;
                        self.pending += s - cur;
                        cur = s;
                        self.flush();
                        while i < in_step.len() && in_step[i].0 == s {
                            let (_, site, mark) = in_step[i];
                            self.u[site] *= 1.0 + mark;
                            i += 1;
                        }
                        self.renormalize(s)?;
                    }
                    self.pending += t1 - cur;
                }
                _ => {
                    let half = 0.5 * (t1 - t0);
                    if !in_step.is_empty() {
                        self.pending += half;
                        self.flush();
                        for &(_, site, mark) in in_step {
                            self.u[site] *= 1.0 + mark;
                        }
                        self.renormalize(t0 + half)?;
                        self.pending += half;
                    } else {
                        self.pending += t1 - t0;
                    }
                }
            }
            self.events_applied += in_step.len();
            next_event = step_end;

            if gaussian && !self.extinct {
                self.flush();
                let sigma = self.env.sigma2().sqrt();
                for (s, &e) in self.env_sites.iter().enumerate() {
                    let b = self.env.brownian(e, t1);
                    self.u[s] *= (sigma * (b - b_prev[s])).exp();
                    b_prev[s] = b;
                }
                self.renormalize(t1)?;
            }

            if rec_idx < rec_times.len() && t1 == rec_times[rec_idx] {
                self.flush();
                self.renormalize(t1)?;
                let z = if self.extinct {
                    f64::NEG_INFINITY
                } else {
                    let m = pairwise_sum(&self.u);
                    if m > 0.0 { m.ln() + self.log_scale } else { f64::NEG_INFINITY }
                };
                times.push(t1);
                log_z.push(z);
                if self.opts.record_fields {
                    fields.push(self.snapshot());
                }
                rec_idx += 1;
            }
        }

        let escape = ctrw::box_exit_bound(&self.rates, self.horizon, lbox.radius());
        let scheme = SchemeInfo {
            lattice_box: lbox,
            rates: self.rates.clone(),
            horizon: self.horizon,
            dt: self.opts.dt,
            placement,
            splitting: if gaussian { "lie (gaussian after diffusion)".into() } else { "jump-only".into() },
            tolerance: self.opts.tolerance,
            truncation_bound: self.truncation,
            escape_bound: escape,
            escape_warning: escape > self.opts.escape_tolerance,
            semigroup_applications: self.applications,
            events_applied: self.events_applied,
        };
        Ok(SolveRecord { times, log_z, fields, alpha: self.env.params().alpha(), scheme })
    }
}

/// Step boundaries `0 = t_0 < ... < t_n = horizon`: multiples of `dt`
/// merged with the recording times.
fn step_grid(horizon: f64, dt: f64, record: &[f64]) -> Vec<f64> {
    let n = (horizon / dt).ceil() as usize;
    let mut g: Vec<f64> = (0..n).map(|k| k as f64 * dt).filter(|&t| t < horizon).collect();
    g.extend(record.iter().cloned().filter(|&t| t > 0.0 && t <= horizon));
    g.push(horizon);
    g.sort_by(f64::total_cmp);
    g.dedup();
    // drop slivers left by rounding next to a recording time
    let mut out = Vec::with_capacity(g.len());
    for t in g {
        match out.last() {
            Some(&p) if t - p < 1e-12 * horizon.max(1.0) => {
                if record.contains(&t) || t == horizon {
                    *out.last_mut().unwrap() = t;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

impl SolveRecord {
    fn index_of(&self, t: f64) -> Result<usize> {
        self.times.iter().position(|&s| s == t).ok_or(PolymerError::TimeNotRecorded(t))
    }

    pub fn lattice_box(&self) -> LatticeBox {
        self.scheme.lattice_box
    }

    pub fn horizon(&self) -> f64 {
        self.scheme.horizon
    }

    /// `log Z_t`; `-inf` once every path has been killed.
    pub fn log_partition_function(&self, t: f64) -> Result<f64> {
        Ok(self.log_z[self.index_of(t)?])
    }

    /// `Z_t = sum_x u(t, x)`.
    pub fn partition_function(&self, t: f64) -> Result<f64> {
        Ok(self.log_partition_function(t)?.exp())
    }

    /// `W_t = Z_t exp(-alpha t)`, evaluated in log space.
    pub fn martingale_w(&self, alpha: f64, t: f64) -> Result<f64> {
        Ok((self.log_partition_function(t)? - alpha * t).exp())
    }

    fn scaled_field(&self, t: f64) -> Result<&ScaledField> {
        let i = self.index_of(t)?;
        self.fields.get(i).ok_or_else(|| {
            PolymerError::InvalidParameter("fields were not recorded (record_fields = false)".into())
        })
    }

    /// `u(t, .)` in absolute scale (may underflow for very small `Z_t`).
    pub fn field(&self, t: f64) -> Result<Field> {
        let f = self.scaled_field(t)?;
        let s = f.log_scale.exp();
        Ok(Field { lbox: self.lattice_box(), values: f.values.iter().map(|v| v * s).collect() })
    }

    /// `log u(t, x)`.
    pub fn log_point_to_point(&self, t: f64, x: &[i32]) -> Result<f64> {
        let f = self.scaled_field(t)?;
        let lbox = self.lattice_box();
        let i = lbox.index_of(x).ok_or_else(|| PolymerError::OutsideBox { site: x.to_vec(), radius: lbox.radius() })?;
        Ok(f.values[i].ln() + f.log_scale)
    }

    /// Endpoint law `u(t, .) / Z_t`.
    pub fn endpoint_distribution(&self, t: f64) -> Result<Field> {
        let f = self.scaled_field(t)?;
        let z = pairwise_sum(&f.values);
        if !(z > 0.0) {
            return Err(PolymerError::Extinct);
        }
        Ok(Field { lbox: self.lattice_box(), values: f.values.iter().map(|v| v / z).collect() })
    }

    /// `log sum_x exp(<lambda, x>) u(t, x)`, by log-sum-exp.
    pub fn log_tilted_mass(&self, t: f64, lambda: &[f64]) -> Result<f64> {
        let f = self.scaled_field(t)?;
        let lbox = self.lattice_box();
        if lambda.len() != lbox.dim() {
            return Err(PolymerError::InvalidParameter("lambda has the wrong dimension".into()));
        }
        let logs: Vec<f64> = lbox
            .sites()
            .zip(&f.values)
            .filter(|(_, &v)| v > 0.0)
            .map(|(x, &v)| v.ln() + x.iter().zip(lambda).map(|(&xi, l)| xi as f64 * l).sum::<f64>())
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(m);
        }
        let terms: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        Ok(m + pairwise_sum(&terms).ln() + f.log_scale)
    }

    /// CSV table with columns `t,Z,W`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,Z,W\n");
        for (t, lz) in self.times.iter().zip(&self.log_z) {
            s.push_str(&format!("{t},{:e},{:e}\n", lz.exp(), (lz - self.alpha * t).exp()));
        }
        s
    }

    /// CSV dump of `u(t, .)` with columns `x_1..x_d,u`.
    pub fn field_csv(&self, t: f64) -> Result<String> {
        let f = self.field(t)?;
        let d = f.lbox.dim();
        let mut s: String = (1..=d).map(|i| format!("x_{i},")).collect();
        s.push_str("u\n");
        for (x, v) in f.lbox.sites().zip(&f.values) {
            for c in &x {
                s.push_str(&format!("{c},"));
            }
            s.push_str(&format!("{v:e}\n"));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_env::{EnvironmentParams, Event};

    fn bessel_i0_scaled(s: f64) -> f64 {
        // e^{-s} I_0(s) by its power series
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= (s / 2.0) * (s / 2.0) / (k * k) as f64;
            sum += term;
        }
        (-s).exp() * sum
    }

    fn single_event_env(mark: f64, s: f64, horizon: f64, lbox: LatticeBox) -> EnvironmentRealization {
        let params = EnvironmentParams::bernoulli_reward(mark, 1.0).unwrap();
        EnvironmentRealization::from_events(params, lbox, horizon, 0, &[(vec![0], vec![Event { time: s, mark }])])
            .unwrap()
    }

    #[test]
    fn empty_environment_reproduces_transition_probs() {
        let lbox = LatticeBox::new(2, 12).unwrap();
        let kv = RateVector::new(2, vec![1.0, 0.5, 0.8, 1.2]).unwrap();
        let env = crate::levy_env::sample_environment(&EnvironmentParams::empty(), lbox, 2.0, 3).unwrap();
        let rec = solve_p2p(&env, &kv, 2.0, lbox, &SolverOptions::default(), &[1.0]).unwrap();
        let tp = ctrw::transition_probs(&kv, 2.0, lbox, 1e-13).unwrap();
        assert!(rec.field(2.0).unwrap().max_abs_diff(&tp.field) < 1e-8);
        assert!((rec.partition_function(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((rec.partition_function(2.0).unwrap() - (1.0 - tp.mass_deficit())).abs() < 1e-10);
    }

    #[test]
    fn single_obstacle_kills_occupancy() {
        let lbox = LatticeBox::new(1, 30).unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        for &(s, dt) in &[(0.5, 0.1), (0.37, 0.25), (1.0, 0.0625)] {
            let env = single_event_env(-1.0, s, 2.0, lbox);
            let opts = SolverOptions { dt, placement: EventPlacement::Exact, ..Default::default() };
            let z = solve_p2p(&env, &kv, 2.0, lbox, &opts, &[]).unwrap().partition_function(2.0).unwrap();
            assert!((z - (1.0 - bessel_i0_scaled(s))).abs() < 1e-9, "s={s}: {z}");
        }
    }

    #[test]
    fn single_reward_doubles_occupancy() {
        let lbox = LatticeBox::new(1, 30).unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let env = single_event_env(1.0, 0.7, 2.0, lbox);
        let z = solve_p2p(&env, &kv, 2.0, lbox, &SolverOptions::default(), &[]).unwrap().partition_function(2.0).unwrap();
        assert!((z - (1.0 + bessel_i0_scaled(0.7))).abs() < 1e-9);
    }

    #[test]
    fn obstacle_at_time_zero_plus_everywhere_is_extinct() {
        let lbox = LatticeBox::new(1, 3).unwrap();
        let events: Vec<_> = lbox.sites().map(|x| (x, vec![Event { time: 0.5, mark: -1.0 }])).collect();
        let env = EnvironmentRealization::from_events(EnvironmentParams::hard_obstacles(1.0).unwrap(), lbox, 2.0, 0, &events)
            .unwrap();
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        let rec = solve_p2p(&env, &kv, 2.0, lbox, &SolverOptions::default(), &[1.0]).unwrap();
        assert_eq!(rec.partition_function(1.0).unwrap(), 0.0);
        assert_eq!(rec.endpoint_distribution(2.0), Err(PolymerError::Extinct));
        assert!(rec.partition_function(1.5).is_err());
    }

    #[test]
    fn placements_agree_without_gaussian_part() {
        let lbox = LatticeBox::new(2, 10).unwrap();
        let params = EnvironmentParams::from_preset("hard_obstacles(0.3)+bernoulli_reward(0.5,0.4)").unwrap();
        let env = crate::levy_env::sample_environment(&params, lbox, 2.0, 11).unwrap();
        let kv = RateVector::isotropic(2, 1.0).unwrap();
        let exact = SolverOptions { placement: EventPlacement::Exact, ..Default::default() };
        let mid = SolverOptions { placement: EventPlacement::Midpoint, dt: 1.0 / 256.0, ..Default::default() };
        let a = solve_p2p(&env, &kv, 2.0, lbox, &exact, &[]).unwrap().log_z;
        let b = solve_p2p(&env, &kv, 2.0, lbox, &mid, &[]).unwrap().log_z;
        assert!((a.last().unwrap() - b.last().unwrap()).abs() < 1e-2);
    }

    #[test]
    fn large_growth_is_rescaled_not_overflowed() {
        let lbox = LatticeBox::new(1, 4).unwrap();
        let env = crate::levy_env::sample_environment(&EnvironmentParams::gaussian(1.0).unwrap(), lbox, 1.0, 5).unwrap();
        let mut events = Vec::new();
        for k in 0..400 {
            events.push(Event { time: (k + 1) as f64 / 401.0, mark: 1e3 });
        }
        let env2 = EnvironmentRealization::from_events(env.params().clone(), lbox, 1.0, 5, &[(vec![0], events)]).unwrap();
        let kv = RateVector::isotropic(1, 0.01).unwrap();
        let rec = solve_p2p(&env2, &kv, 1.0, lbox, &SolverOptions::default(), &[]).unwrap();
        let lz = rec.log_partition_function(1.0).unwrap();
        assert!(lz.is_finite() && lz > 2000.0, "{lz}");
        let p = rec.endpoint_distribution(1.0).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn escape_bound_examples() {
        let kv = RateVector::isotropic(2, 1.0).unwrap();
        assert_eq!(escape_bound(&kv, 0.0, 5), 0.0);
        assert!(escape_bound(&kv, 1.0, 20) < 1e-12);
        assert!(escape_bound(&kv, 1.0, 6) < escape_bound(&kv, 1.0, 5));
        assert!(escape_bound(&kv, 1.5, 6) > escape_bound(&kv, 1.0, 6));
    }
}
