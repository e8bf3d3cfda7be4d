//! I.i.d. Lévy environments on Z^d.
//!
//! Each site carries an independent Lévy process with Gaussian variance
//! `sigma2` per unit time and a finite Lévy measure given as a list of atoms.
//! A realization stores the jump events of every site in a box up to a
//! horizon; the Gaussian part is never stored but regenerated on demand from
//! a per-site dyadic Brownian-bridge construction, so every consumer sees the
//! same Brownian path.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PolymerError, Result};
use crate::lattice::LatticeBox;
use crate::seeding::{self, stream};

/// One atom `rate * delta_mark` of the Lévy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: f64,
    pub rate: f64,
}

/// A finite Lévy measure supported on `[-1, inf)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Atom>", into = "Vec<Atom>")]
pub struct LevyMeasure {
    atoms: Vec<Atom>,
}

impl LevyMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !a.mark.is_finite() || a.mark < -1.0 {
                return Err(PolymerError::InvalidParameter(format!(
                    "jump mark {} must be a finite number >= -1",
                    a.mark
                )));
            }
            if !a.rate.is_finite() || a.rate <= 0.0 {
                return Err(PolymerError::InvalidParameter(format!(
                    "atom mass {} must be positive and finite",
                    a.rate
                )));
            }
        }
        let m = LevyMeasure { atoms };
        if !m.mean_jump_rate().is_finite() {
            return Err(PolymerError::InvalidParameter("integral of r against rho is not finite".into()));
        }
        Ok(m)
    }

    pub fn empty() -> Self {
        LevyMeasure { atoms: Vec::new() }
    }

    pub fn single(mark: f64, rate: f64) -> Result<Self> {
        LevyMeasure::new(vec![Atom { mark, rate }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total mass, the event rate per site.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate).sum()
    }

    /// `sum nu * r`.
    pub fn mean_jump_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate * a.mark).sum()
    }

    /// `sum nu * r^2`.
    pub fn second_moment_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate * a.mark * a.mark).sum()
    }

    pub fn has_hard_obstacles(&self) -> bool {
        self.atoms.iter().any(|a| a.mark == -1.0)
    }

    pub fn max_mark(&self) -> Option<f64> {
        self.atoms.iter().map(|a| a.mark).reduce(f64::max)
    }

    fn merged(mut self, other: &LevyMeasure) -> Self {
        self.atoms.extend_from_slice(&other.atoms);
        self
    }
}

impl TryFrom<Vec<Atom>> for LevyMeasure {
    type Error = PolymerError;
    fn try_from(atoms: Vec<Atom>) -> Result<Self> {
        LevyMeasure::new(atoms)
    }
}

impl From<LevyMeasure> for Vec<Atom> {
    fn from(m: LevyMeasure) -> Self {
        m.atoms
    }
}

/// The characteristic pair `(sigma2, rho)` of the per-site noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParams {
    pub sigma2: f64,
    pub levy: LevyMeasure,
}

impl EnvironmentParams {
    pub fn new(sigma2: f64, levy: LevyMeasure) -> Result<Self> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(PolymerError::InvalidParameter(format!("sigma2 = {sigma2} must be >= 0")));
        }
        Ok(EnvironmentParams { sigma2, levy })
    }

    /// No noise at all.
    pub fn empty() -> Self {
        EnvironmentParams { sigma2: 0.0, levy: LevyMeasure::empty() }
    }

    pub fn hard_obstacles(rate: f64) -> Result<Self> {
        EnvironmentParams::new(0.0, LevyMeasure::single(-1.0, rate)?)
    }

    pub fn bernoulli_reward(mark: f64, rate: f64) -> Result<Self> {
        EnvironmentParams::new(0.0, LevyMeasure::single(mark, rate)?)
    }

    pub fn gaussian(sigma2: f64) -> Result<Self> {
        EnvironmentParams::new(sigma2, LevyMeasure::empty())
    }

    /// Parse a preset expression such as `hard_obstacles(1) + gaussian(0.5)`.
    ///
    /// Terms: `hard_obstacles(nu)`, `bernoulli_reward(r, nu)`, `atom(r, nu)`,
    /// `gaussian(sigma2)` and `empty`. Terms add: variances sum and atom lists
    /// concatenate.
    pub fn from_preset(expr: &str) -> Result<Self> {
        let mut out = EnvironmentParams::empty();
        for term in expr.split('+') {
            let term = term.trim();
            if term.is_empty() || term == "empty" || term == "none" {
                continue;
            }
            let (name, args) = parse_call(term).ok_or_else(|| PolymerError::UnknownPreset(term.to_string()))?;
            let part = match (name, args.as_slice()) {
                ("hard_obstacles", [nu]) => EnvironmentParams::hard_obstacles(*nu)?,
                ("bernoulli_reward", [r, nu]) | ("atom", [r, nu]) => EnvironmentParams::bernoulli_reward(*r, *nu)?,
                ("gaussian", [s2]) => EnvironmentParams::gaussian(*s2)?,
                _ => return Err(PolymerError::UnknownPreset(term.to_string())),
            };
            out = EnvironmentParams::new(out.sigma2 + part.sigma2, out.levy.merged(&part.levy))?;
        }
        Ok(out)
    }

    /// Annealed exponent `sigma2 / 2 + sum nu * r`.
    pub fn alpha(&self) -> f64 {
        alpha(self)
    }
}

impl fmt::Display for EnvironmentParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        if self.sigma2 > 0.0 {
            terms.push(format!("gaussian({})", self.sigma2));
        }
        for a in self.levy.atoms() {
            if a.mark == -1.0 {
                terms.push(format!("hard_obstacles({})", a.rate));
            } else {
                terms.push(format!("atom({}, {})", a.mark, a.rate));
            }
        }
        if terms.is_empty() {
            write!(f, "empty")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

fn parse_call(term: &str) -> Option<(&str, Vec<f64>)> {
    let open = term.find('(')?;
    let inner = term[open + 1..].strip_suffix(')')?;
    let name = term[..open].trim();
    let args = inner
        .split(',')
        .map(|a| a.trim().parse::<f64>().ok())
        .collect::<Option<Vec<_>>>()?;
    Some((name, args))
}

/// Annealed exponent: `E[exp L_0(t)] = exp(alpha * t)`.
pub fn alpha(params: &EnvironmentParams) -> f64 {
    params.sigma2 / 2.0 + params.levy.mean_jump_rate()
}

/// A jump of the environment at one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub mark: f64,
}

impl Event {
    #[inline]
    pub fn log_factor(&self) -> f64 {
        // ln_1p(-1) = -inf: hard obstacles are absorbing
        self.mark.ln_1p()
    }
}

/// Deepest level of the dyadic Brownian-bridge construction; below it the
/// path is interpolated linearly.
const BRIDGE_DEPTH: u32 = 48;

/// A sampled environment on a finite box up to a horizon.
///
/// Immutable after construction. Jump events are stored in compressed rows
/// (one row per site, time-sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentRealization {
    params: EnvironmentParams,
    horizon: f64,
    lbox: LatticeBox,
    seed: u64,
    /// +1, or -1 for a mirrored realization (Gaussian keys follow the mirror).
    orientation: i32,
    offsets: Vec<usize>,
    events: Vec<Event>,
    gaussian_keys: Vec<u64>,
    bridge_span: f64,
}

/// Sample every site of `lbox` independently up to time `horizon`.
///
/// The stream of a site is keyed by `(seed, site coordinates)`, so the events
/// at a site do not depend on the box size or on iteration order.
pub fn sample_environment(
    params: &EnvironmentParams,
    lbox: LatticeBox,
    horizon: f64,
    seed: u64,
) -> Result<EnvironmentRealization> {
    check_horizon(horizon)?;
    let nu_tot = params.levy.total_mass();
    let atoms = params.levy.atoms();
    let count_dist = if nu_tot > 0.0 {
        Some(Poisson::new(nu_tot * horizon).map_err(|e| PolymerError::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let mut offsets = Vec::with_capacity(lbox.len() + 1);
    let mut events = Vec::new();
    offsets.push(0);
    for coords in lbox.sites() {
        if let Some(dist) = &count_dist {
            let mut rng = seeding::rng(seed, &[stream::JUMPS, seeding::site_tag(&coords)]);
            let n = dist.sample(&mut rng) as usize;
            let start = events.len();
            for _ in 0..n {
                // 1 - U lies in (0, 1]
                let time = horizon * (1.0 - rng.random::<f64>());
                let mark = pick_mark(atoms, nu_tot, &mut rng);
                events.push(Event { time, mark });
            }
            events[start..].sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        offsets.push(events.len());
    }
    Ok(EnvironmentRealization::assemble(params.clone(), horizon, lbox, seed, 1, offsets, events))
}

fn pick_mark<R: Rng>(atoms: &[Atom], total: f64, rng: &mut R) -> f64 {
    if atoms.len() == 1 {
        return atoms[0].mark;
    }
    let mut u = rng.random::<f64>() * total;
    for a in atoms {
        if u < a.rate {
            return a.mark;
        }
        u -= a.rate;
    }
    atoms[atoms.len() - 1].mark
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(PolymerError::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    Ok(())
}

impl EnvironmentRealization {
    fn assemble(
        params: EnvironmentParams,
        horizon: f64,
        lbox: LatticeBox,
        seed: u64,
        orientation: i32,
        offsets: Vec<usize>,
        events: Vec<Event>,
    ) -> Self {
        let gaussian_keys = if params.sigma2 > 0.0 {
            lbox.sites()
                .map(|c| {
                    let oriented: Vec<i32> = c.iter().map(|x| x * orientation).collect();
                    seeding::derive(seed, &[stream::GAUSSIAN, seeding::site_tag(&oriented)])
                })
                .collect()
        } else {
            Vec::new()
        };
        let bridge_span = horizon.log2().ceil().clamp(-40.0, 60.0).exp2();
        EnvironmentRealization { params, horizon, lbox, seed, orientation, offsets, events, gaussian_keys, bridge_span }
    }

    /// Build a realization from explicit per-site event lists.
    ///
    /// Sites not listed carry no events. The Gaussian part (if `sigma2 > 0`)
    /// is derived from `seed` exactly as in [`sample_environment`].
    pub fn from_events(
        params: EnvironmentParams,
        lbox: LatticeBox,
        horizon: f64,
        seed: u64,
        site_events: &[(Vec<i32>, Vec<Event>)],
    ) -> Result<Self> {
        Self::from_events_oriented(params, lbox, horizon, seed, 1, site_events)
    }

    fn from_events_oriented(
        params: EnvironmentParams,
        lbox: LatticeBox,
        horizon: f64,
        seed: u64,
        orientation: i32,
        site_events: &[(Vec<i32>, Vec<Event>)],
    ) -> Result<Self> {
        check_horizon(horizon)?;
        let mut rows: Vec<Vec<Event>> = vec![Vec::new(); lbox.len()];
        for (coords, evs) in site_events {
            let idx = lbox
                .index_of(coords)
                .ok_or_else(|| PolymerError::OutsideBox { site: coords.clone(), radius: lbox.radius() })?;
            for e in evs {
                if !(e.time > 0.0 && e.time <= horizon) {
                    return Err(PolymerError::InvalidParameter(format!(
                        "event time {} outside (0, {horizon}]",
                        e.time
                    )));
                }
                if !(e.mark.is_finite() && e.mark >= -1.0) {
                    return Err(PolymerError::InvalidParameter(format!("event mark {} < -1", e.mark)));
                }
            }
            rows[idx].extend_from_slice(evs);
            rows[idx].sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        let mut offsets = Vec::with_capacity(lbox.len() + 1);
        let mut events = Vec::new();
        offsets.push(0);
        for row in rows {
            events.extend(row);
            offsets.push(events.len());
        }
        Ok(Self::assemble(params, horizon, lbox, seed, orientation, offsets, events))
    }

    pub fn params(&self) -> &EnvironmentParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lattice_box(&self) -> LatticeBox {
        self.lbox
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma2(&self) -> f64 {
        self.params.sigma2
    }

    pub fn total_events(&self) -> usize {
        self.events.len()
    }

    /// Events of the site with linear index `idx`, sorted by time.
    #[inline]
    pub fn events_at_index(&self, idx: usize) -> &[Event] {
        &self.events[self.offsets[idx]..self.offsets[idx + 1]]
    }

    pub fn events_at(&self, coords: &[i32]) -> Option<&[Event]> {
        self.lbox.index_of(coords).map(|i| self.events_at_index(i))
    }

    /// All events as `(time, site index, mark)`, ordered by time; ties keep
    /// site order and then per-site order.
    pub fn events_by_time(&self) -> Vec<(f64, usize, f64)> {
        let mut all: Vec<(f64, usize, f64)> = (0..self.lbox.len())
            .flat_map(|i| self.events_at_index(i).iter().map(move |e| (e.time, i, e.mark)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all
    }

    /// Sum of `log(1 + r)` over events at site `idx` in `(a, b]`.
    #[inline]
    pub fn jump_log_factor(&self, idx: usize, a: f64, b: f64) -> f64 {
        let evs = self.events_at_index(idx);
        let lo = evs.partition_point(|e| e.time <= a);
        let hi = evs.partition_point(|e| e.time <= b);
        let mut acc = 0.0;
        for e in &evs[lo..hi.max(lo)] {
            acc += e.log_factor();
        }
        acc
    }

    /// Standard Brownian motion of site `idx` at time `t`.
    pub fn brownian(&self, idx: usize, t: f64) -> f64 {
        if self.gaussian_keys.is_empty() {
            return 0.0;
        }
        brownian_bridge_value(self.gaussian_keys[idx], self.bridge_span, t)
    }

    /// Gaussian part of `L` over `[a, b]`: variance `sigma2 * (b - a)`.
    #[inline]
    pub fn gaussian_increment(&self, idx: usize, a: f64, b: f64) -> f64 {
        if self.params.sigma2 == 0.0 {
            return 0.0;
        }
        self.params.sigma2.sqrt() * (self.brownian(idx, b) - self.brownian(idx, a))
    }

    /// `L(b) - L(a)` at the site with linear index `idx`, no range checks.
    #[inline]
    pub fn log_weight_factor_index(&self, idx: usize, a: f64, b: f64) -> f64 {
        let jumps = self.jump_log_factor(idx, a, b);
        if jumps == f64::NEG_INFINITY {
            return jumps;
        }
        jumps + self.gaussian_increment(idx, a, b)
    }

    /// `L_site(b) - L_site(a)`; `-inf` iff a hard obstacle falls in `(a, b]`.
    pub fn log_weight_factor(&self, site: &[i32], a: f64, b: f64) -> Result<f64> {
        let idx = self
            .lbox
            .index_of(site)
            .ok_or_else(|| PolymerError::OutsideBox { site: site.to_vec(), radius: self.lbox.radius() })?;
        if !(0.0 <= a && a <= b && b <= self.horizon) {
            return Err(PolymerError::InvalidParameter(format!(
                "interval [{a}, {b}] not inside [0, {}]",
                self.horizon
            )));
        }
        Ok(self.log_weight_factor_index(idx, a, b))
    }

    /// The environment seen under `x -> -x`.
    pub fn mirrored(&self) -> Self {
        let n = self.lbox.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut events = Vec::with_capacity(self.events.len());
        offsets.push(0);
        for i in (0..n).rev() {
            events.extend_from_slice(self.events_at_index(i));
            offsets.push(events.len());
        }
        Self::assemble(self.params.clone(), self.horizon, self.lbox, self.seed, -self.orientation, offsets, events)
    }

    pub fn to_file(&self) -> EnvironmentFile {
        let sites = (0..self.lbox.len())
            .filter(|&i| !self.events_at_index(i).is_empty())
            .map(|i| SiteEvents {
                site: self.lbox.coords_of(i),
                events: self.events_at_index(i).iter().map(|e| [e.time, e.mark]).collect(),
            })
            .collect();
        EnvironmentFile {
            schema: ENV_SCHEMA.to_string(),
            params: self.params.clone(),
            horizon: self.horizon,
            dim: self.lbox.dim(),
            radius: self.lbox.radius(),
            seed: self.seed,
            orientation: self.orientation,
            sites,
        }
    }

    pub fn from_file(file: &EnvironmentFile) -> Result<Self> {
        if file.schema != ENV_SCHEMA {
            return Err(PolymerError::InvalidParameter(format!("unsupported schema `{}`", file.schema)));
        }
        let params = EnvironmentParams::new(file.params.sigma2, file.params.levy.clone())?;
        let lbox = LatticeBox::new(file.dim, file.radius)?;
        let site_events: Vec<(Vec<i32>, Vec<Event>)> = file
            .sites
            .iter()
            .map(|s| (s.site.clone(), s.events.iter().map(|&[time, mark]| Event { time, mark }).collect()))
            .collect();
        let orientation = if file.orientation < 0 { -1 } else { 1 };
        Self::from_events_oriented(params, lbox, file.horizon, file.seed, orientation, &site_events)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("environment serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: EnvironmentFile =
            serde_json::from_str(s).map_err(|e| PolymerError::InvalidParameter(format!("bad environment JSON: {e}")))?;
        Self::from_file(&file)
    }
}

pub const ENV_SCHEMA: &str = "levy-environment/1";

/// JSON replay format of a realization.
///
/// ```json
/// { "schema": "levy-environment/1",
///   "params": { "sigma2": 0.0, "levy": [ { "mark": -1.0, "rate": 1.0 } ] },
///   "horizon": 2.0, "dim": 1, "radius": 10, "seed": 7, "orientation": 1,
///   "sites": [ { "site": [0], "events": [[0.53, -1.0]] } ] }
/// ```
///
/// Only sites with at least one event are listed; `events` holds
/// `[time, mark]` pairs in increasing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub schema: String,
    pub params: EnvironmentParams,
    pub horizon: f64,
    pub dim: usize,
    pub radius: u32,
    pub seed: u64,
    #[serde(default = "default_orientation")]
    pub orientation: i32,
    pub sites: Vec<SiteEvents>,
}

fn default_orientation() -> i32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEvents {
    pub site: Vec<i32>,
    pub events: Vec<[f64; 2]>,
}

fn bridge_normal(key: u64, level: u32, node: u64) -> f64 {
    let mut rng = seeding::rng(key, &[level as u64, node]);
    StandardNormal.sample(&mut rng)
}

/// Value at `t` of the Brownian path encoded by `key` on `[0, span]`.
///
/// The endpoint is `N(0, span)`; each dyadic midpoint is drawn from the
/// bridge law given its parent interval, with its own keyed normal. Dyadic
/// times are hit exactly; other times descend [`BRIDGE_DEPTH`] levels and
/// interpolate.
fn brownian_bridge_value(key: u64, span: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (mut a, mut b) = (0.0_f64, span);
    let (mut wa, mut wb) = (0.0_f64, span.sqrt() * bridge_normal(key, 0, 0));
    let mut node = 0u64;
    for level in 1..=BRIDGE_DEPTH {
        if t == b {
            return wb;
        }
        let mid = a + 0.5 * (b - a);
        let wm = 0.5 * (wa + wb) + (0.25 * (b - a)).sqrt() * bridge_normal(key, level, node);
        if t == mid {
            return wm;
        }
        if t < mid {
            b = mid;
            wb = wm;
            node *= 2;
        } else {
            a = mid;
            wa = wm;
            node = 2 * node + 1;
        }
    }
    wa + (wb - wa) * (t - a) / (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_site() -> LatticeBox {
        LatticeBox::new(1, 1).unwrap()
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(EnvironmentParams::gaussian(1.0).unwrap().alpha(), 0.5);
        assert_eq!(EnvironmentParams::hard_obstacles(2.5).unwrap().alpha(), -2.5);
        assert_eq!(EnvironmentParams::bernoulli_reward(0.5, 2.0).unwrap().alpha(), 1.0);
    }

    #[test]
    fn rejects_invalid_measures() {
        assert!(LevyMeasure::single(-1.5, 1.0).is_err());
        assert!(LevyMeasure::single(0.5, 0.0).is_err());
        assert!(LevyMeasure::single(f64::INFINITY, 1.0).is_err());
        assert!(EnvironmentParams::gaussian(-0.1).is_err());
    }

    #[test]
    fn presets_parse_and_combine() {
        let p = EnvironmentParams::from_preset("hard_obstacles(1) + gaussian(0.5) + bernoulli_reward(0.3, 0.5)").unwrap();
        assert_eq!(p.sigma2, 0.5);
        assert_eq!(p.levy.atoms().len(), 2);
        assert!((p.alpha() - (0.25 - 1.0 + 0.15)).abs() < 1e-15);
        assert_eq!(EnvironmentParams::from_preset("empty").unwrap(), EnvironmentParams::empty());
        assert!(matches!(EnvironmentParams::from_preset("walls(1)"), Err(PolymerError::UnknownPreset(_))));
        assert!(EnvironmentParams::from_preset("gaussian(1,2)").is_err());
        let round = EnvironmentParams::from_preset(&p.to_string()).unwrap();
        assert_eq!(round.alpha(), p.alpha());
    }

    #[test]
    fn empty_measure_has_no_events() {
        let b = LatticeBox::new(2, 3).unwrap();
        let env = sample_environment(&EnvironmentParams::empty(), b, 5.0, 11).unwrap();
        assert_eq!(env.total_events(), 0);
        assert_eq!(env.log_weight_factor(&[1, -2], 0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_realization() {
        let p = EnvironmentParams::from_preset("hard_obstacles(1) + atom(0.5, 2)").unwrap();
        let b = LatticeBox::new(2, 4).unwrap();
        let e1 = sample_environment(&p, b, 3.0, 99).unwrap();
        let e2 = sample_environment(&p, b, 3.0, 99).unwrap();
        assert_eq!(e1, e2);
        let e3 = sample_environment(&p, b, 3.0, 100).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn site_streams_do_not_depend_on_box_size() {
        let p = EnvironmentParams::hard_obstacles(2.0).unwrap();
        let small = sample_environment(&p, LatticeBox::new(2, 2).unwrap(), 2.0, 5).unwrap();
        let big = sample_environment(&p, LatticeBox::new(2, 6).unwrap(), 2.0, 5).unwrap();
        for c in small.lattice_box().sites() {
            assert_eq!(small.events_at(&c), big.events_at(&c));
        }
    }

    #[test]
    fn events_sorted_inside_horizon() {
        let p = EnvironmentParams::bernoulli_reward(0.2, 7.0).unwrap();
        let env = sample_environment(&p, LatticeBox::new(1, 20).unwrap(), 2.5, 3).unwrap();
        assert!(env.total_events() > 0);
        for i in 0..env.lattice_box().len() {
            let evs = env.events_at_index(i);
            assert!(evs.windows(2).all(|w| w[0].time < w[1].time));
            assert!(evs.iter().all(|e| e.time > 0.0 && e.time <= 2.5));
        }
    }

    #[test]
    fn weight_factor_examples() {
        let obstacle = EnvironmentRealization::from_events(
            EnvironmentParams::hard_obstacles(1.0).unwrap(),
            one_site(),
            1.0,
            0,
            &[(vec![0], vec![Event { time: 0.5, mark: -1.0 }])],
        )
        .unwrap();
        assert_eq!(obstacle.log_weight_factor(&[0], 0.0, 1.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(obstacle.log_weight_factor(&[0], 0.0, 0.5).unwrap(), f64::NEG_INFINITY);
        assert_eq!(obstacle.log_weight_factor(&[0], 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(obstacle.log_weight_factor(&[1], 0.0, 1.0).unwrap(), 0.0);

        let reward = EnvironmentRealization::from_events(
            EnvironmentParams::bernoulli_reward(1.0, 1.0).unwrap(),
            one_site(),
            1.0,
            0,
            &[(vec![0], vec![Event { time: 0.5, mark: 1.0 }])],
        )
        .unwrap();
        assert_eq!(reward.log_weight_factor(&[0], 0.0, 1.0).unwrap(), 2f64.ln());
        assert!(reward.log_weight_factor(&[2], 0.0, 1.0).is_err());
        assert!(reward.log_weight_factor(&[0], 0.0, 1.5).is_err());
    }

    #[test]
    fn brownian_hits_dyadic_nodes_exactly() {
        let key = 1234;
        let v = brownian_bridge_value(key, 4.0, 1.0);
        assert_eq!(v, brownian_bridge_value(key, 4.0, 1.0));
        assert_eq!(brownian_bridge_value(key, 4.0, 0.0), 0.0);
        // a point just off a node interpolates close to the node value
        let near = brownian_bridge_value(key, 4.0, 1.0 + 1e-12);
        assert!((near - v).abs() < 1e-4);
    }

    #[test]
    fn gaussian_refinement_is_exact_per_seed() {
        let p = EnvironmentParams::gaussian(2.0).unwrap();
        let env = sample_environment(&p, LatticeBox::new(1, 2).unwrap(), 3.0, 8).unwrap();
        let (a, b, c) = (0.1, 1.37, 2.9);
        let whole = env.log_weight_factor(&[1], a, c).unwrap();
        let parts = env.log_weight_factor(&[1], a, b).unwrap() + env.log_weight_factor(&[1], b, c).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = EnvironmentParams::from_preset("hard_obstacles(0.5) + atom(0.3, 1) + gaussian(0.2)").unwrap();
        let env = sample_environment(&p, LatticeBox::new(2, 3).unwrap(), 2.0, 42).unwrap();
        let back = EnvironmentRealization::from_json(&env.to_json()).unwrap();
        assert_eq!(env, back);
        let m = env.mirrored();
        assert_eq!(EnvironmentRealization::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn mirrored_gaussian_follows_sites() {
        let p = EnvironmentParams::gaussian(1.0).unwrap();
        let env = sample_environment(&p, LatticeBox::new(1, 3).unwrap(), 1.0, 4).unwrap();
        let m = env.mirrored();
        let x = env.log_weight_factor(&[2], 0.0, 0.75).unwrap();
        let y = m.log_weight_factor(&[-2], 0.0, 0.75).unwrap();
        assert_eq!(x, y);
    }
}
