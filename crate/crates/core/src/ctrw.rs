//! Continuous-time nearest-neighbour random walks with anisotropic rates.
//!
//! Directions are indexed `2 * axis` for `+e_axis` and `2 * axis + 1` for
//! `-e_axis`. A walk with rate vector `kappa` jumps in direction `e` at rate
//! `kappa_e / (2d)`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{PolymerError, Result};
use crate::lattice::{Boundary, Field, LatticeBox};
use crate::par::ExecMode;
use crate::seeding::{self, stream};
use crate::semigroup::JumpKernel;

/// Rates `kappa_e > 0` for the `2d` unit steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    dim: usize,
    rates: Vec<f64>,
}

impl RateVector {
    pub fn new(dim: usize, rates: Vec<f64>) -> Result<Self> {
        if dim == 0 || rates.len() != 2 * dim {
            return Err(PolymerError::InvalidParameter(format!(
                "a rate vector in dimension {dim} needs {} entries, got {}",
                2 * dim,
                rates.len()
            )));
        }
        if let Some(k) = rates.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(PolymerError::InvalidParameter(format!("rate {k} must be positive and finite")));
        }
        Ok(RateVector { dim, rates })
    }

    pub fn isotropic(dim: usize, kappa: f64) -> Result<Self> {
        RateVector::new(dim, vec![kappa; 2 * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, axis: usize, positive: bool) -> f64 {
        self.rates[direction_index(axis, positive)]
    }

    /// Total jump rate `sum_e kappa_e / (2d)`.
    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / (2 * self.dim) as f64
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_isotropic(&self) -> bool {
        self.rates.iter().all(|&k| k == self.rates[0])
    }

    /// Entrywise sum; the walk of the sum is the sum of independent walks.
    pub fn plus(&self, other: &RateVector) -> Result<RateVector> {
        if self.dim != other.dim {
            return Err(PolymerError::InvalidParameter("rate vectors of different dimension".into()));
        }
        RateVector::new(self.dim, self.rates.iter().zip(&other.rates).map(|(a, b)| a + b).collect())
    }
}

#[inline]
pub fn direction_index(axis: usize, positive: bool) -> usize {
    2 * axis + usize::from(!positive)
}

/// `<lambda, e>` for direction index `dir`.
#[inline]
fn dot_unit(lambda: &[f64], dir: usize) -> f64 {
    let v = lambda[dir / 2];
    if dir % 2 == 0 {
        v
    } else {
        -v
    }
}

/// Cumulant generating function `log E[exp <lambda, X_1>] = sum_e (kappa_e/2d)(e^{<lambda,e>} - 1)`.
pub fn cumulant(kv: &RateVector, lambda: &[f64]) -> f64 {
    assert_eq!(lambda.len(), kv.dim, "lambda has the wrong dimension");
    let two_d = (2 * kv.dim) as f64;
    kv.rates
        .iter()
        .enumerate()
        .map(|(dir, k)| k / two_d * dot_unit(lambda, dir).exp_m1())
        .sum()
}

/// Cramér transform of the isotropic walk: rates `kappa * exp(<lambda, e>)`.
pub fn tilt(kappa: f64, lambda: &[f64]) -> Result<RateVector> {
    check_kappa(kappa)?;
    let dim = lambda.len();
    RateVector::new(dim, (0..2 * dim).map(|dir| kappa * dot_unit(lambda, dir).exp()).collect())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(PolymerError::InvalidParameter(format!("kappa = {kappa} must be positive")));
    }
    Ok(())
}

/// Isotropic lower and upper envelopes of a tilted rate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltBounds {
    pub lambda: Vec<f64>,
    pub tilted: RateVector,
    pub kappa_under: f64,
    pub kappa_over: f64,
    /// `tilted - kappa_under * 1`, entries >= 0.
    pub delta1: Vec<f64>,
    /// `kappa_over * 1 - tilted`, entries >= 0.
    pub delta2: Vec<f64>,
}

impl TiltBounds {
    pub fn under(&self) -> Result<RateVector> {
        RateVector::isotropic(self.tilted.dim(), self.kappa_under)
    }

    pub fn over(&self) -> Result<RateVector> {
        RateVector::isotropic(self.tilted.dim(), self.kappa_over)
    }
}

pub fn kappa_bounds(kappa: f64, lambda: &[f64]) -> Result<TiltBounds> {
    let tilted = tilt(kappa, lambda)?;
    let kappa_under = tilted.rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let kappa_over = tilted.rates.iter().cloned().fold(0.0, f64::max);
    let delta1 = tilted.rates.iter().map(|k| k - kappa_under).collect();
    let delta2 = tilted.rates.iter().map(|k| kappa_over - k).collect();
    Ok(TiltBounds { lambda: lambda.to_vec(), tilted, kappa_under, kappa_over, delta1, delta2 })
}

/// `asinh` via `log(x + sqrt(x^2 + 1))`, arranged to avoid cancellation at
/// both small and large `|x|`.
pub fn stable_asinh(x: f64) -> f64 {
    if x < 0.0 {
        return -stable_asinh(-x);
    }
    if x > 1e8 {
        // sqrt(x^2 + 1) = x (1 + 1/(2x^2) + ...)
        return (2.0 * x).ln() + 0.25 / (x * x);
    }
    let r = (x * x + 1.0).sqrt();
    (x + x * x / (1.0 + r)).ln_1p()
}

/// Closed-form rate function of the isotropic walk,
/// `sum_i x_i asinh(d x_i / kappa) - sqrt(x_i^2 + kappa^2/d^2) + kappa/d`.
pub fn rate_function_closed(kappa: f64, x: &[f64]) -> f64 {
    let c = kappa / x.len() as f64;
    x.iter()
        .map(|&xi| {
            // sqrt(x^2 + c^2) - c without cancellation
            let excess = xi * xi / ((xi * xi + c * c).sqrt() + c);
            xi * stable_asinh(xi / c) - excess
        })
        .sum()
}

/// Result of the per-coordinate Legendre maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreSolution {
    pub value: f64,
    /// Maximizing tilt, found by safeguarded Newton iteration.
    pub lambda: Vec<f64>,
    /// Largest gap between the iterate and the closed stationary point `asinh(d x_i / kappa)`.
    pub max_stationarity_gap: f64,
}

/// `sup_lambda <lambda, x> - Lambda(lambda)` for the isotropic walk.
pub fn rate_function_legendre(kappa: f64, x: &[f64]) -> f64 {
    legendre_solve(kappa, x).value
}

pub fn legendre_solve(kappa: f64, x: &[f64]) -> LegendreSolution {
    // The cumulant separates into sum_i c (cosh lambda_i - 1), c = kappa / d.
    let c = kappa / x.len() as f64;
    let mut value = 0.0;
    let mut lambda = Vec::with_capacity(x.len());
    let mut gap: f64 = 0.0;
    for &xi in x {
        let li = maximize_coordinate(xi, c);
        let closed = stable_asinh(xi / c);
        gap = gap.max((li - closed).abs());
        // l x - c (cosh l - 1), with cosh l - 1 = 2 sinh^2(l/2)
        let s = (0.5 * li).sinh();
        value += li * xi - 2.0 * c * s * s;
        lambda.push(li);
    }
    LegendreSolution { value, lambda, max_stationarity_gap: gap }
}

/// Maximize the concave `l x - c (cosh l - 1)` by Newton steps on its
/// derivative, falling back to bisection whenever a step leaves the bracket.
fn maximize_coordinate(x: f64, c: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let deriv = |l: f64| x - c * l.sinh();
    // bracket the root of the decreasing derivative
    let (mut lo, mut hi) = if x > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    while deriv(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while deriv(lo) < 0.0 {
        hi = lo;
        lo *= 2.0;
    }
    let mut l = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = deriv(l);
        if g == 0.0 {
            return l;
        }
        if g > 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = l + g / (c * l.cosh());
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - l).abs() <= 1e-15 * l.abs().max(1e-300) {
            return next;
        }
        l = next;
    }
    l
}

/// `(L f)(x) = sum_e (kappa_e / 2d)(f(x + e) - f(x))`.
///
/// With [`Boundary::Dirichlet`] neighbours outside the box count as 0; with
/// [`Boundary::Periodic`] coordinates wrap.
pub fn generator_apply(f: &Field, kv: &RateVector, boundary: Boundary) -> Result<Field> {
    let lbox = f.lbox;
    if kv.dim != lbox.dim() {
        return Err(PolymerError::InvalidParameter("rate vector and field dimensions differ".into()));
    }
    let two_d = (2 * kv.dim) as f64;
    let side = lbox.side() as i64;
    let r = lbox.radius() as i64;
    let mut out = Field::zeros(lbox);
    for (idx, coords) in lbox.sites().enumerate() {
        let here = f.values[idx];
        let mut acc = 0.0;
        for dir in 0..2 * kv.dim {
            let axis = dir / 2;
            let mut nb = coords.clone();
            nb[axis] += if dir % 2 == 0 { 1 } else { -1 };
            let there = match lbox.index_of(&nb) {
                Some(j) => f.values[j],
                None => match boundary {
                    Boundary::Dirichlet => 0.0,
                    Boundary::Periodic => {
                        let wrapped = (nb[axis] as i64 + r).rem_euclid(side) - r;
                        nb[axis] = wrapped as i32;
                        f.values[lbox.index_of(&nb).expect("wrapped site")]
                    }
                },
            };
            acc += kv.rates[dir] / two_d * (there - here);
        }
        out.values[idx] = acc;
    }
    Ok(out)
}

/// A piecewise-constant (càdlàg) lattice path started at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerPath {
    pub dim: usize,
    pub horizon: f64,
    /// `(jump time, direction index)`, times strictly increasing in `(0, horizon]`.
    pub jumps: Vec<(f64, u8)>,
}

impl PolymerPath {
    pub fn constant(dim: usize, horizon: f64) -> Self {
        PolymerPath { dim, horizon, jumps: Vec::new() }
    }

    /// Position at `t`; jumps at time exactly `t` are included.
    pub fn position_at(&self, t: f64) -> Vec<i32> {
        let mut pos = vec![0i32; self.dim];
        for &(s, dir) in &self.jumps {
            if s > t {
                break;
            }
            step(&mut pos, dir);
        }
        pos
    }

    pub fn endpoint(&self) -> Vec<i32> {
        self.position_at(self.horizon)
    }

    /// Constancy intervals `(start, end, site)` covering `[0, horizon]`.
    pub fn segments(&self) -> Vec<(f64, f64, Vec<i32>)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut pos = vec![0i32; self.dim];
        let mut start = 0.0;
        for &(s, dir) in &self.jumps {
            out.push((start, s, pos.clone()));
            step(&mut pos, dir);
            start = s;
        }
        out.push((start, self.horizon, pos));
        out
    }
}

#[inline]
pub(crate) fn step(pos: &mut [i32], dir: u8) {
    let axis = (dir / 2) as usize;
    pos[axis] += if dir % 2 == 0 { 1 } else { -1 };
}

/// Sample a path on `[0, horizon]` with exponential holding times.
pub fn sample_path<R: Rng + ?Sized>(kv: &RateVector, horizon: f64, rng: &mut R) -> PolymerPath {
    assert!(horizon > 0.0, "horizon must be positive");
    let total: f64 = kv.rates.iter().sum();
    let hold = Exp::new(kv.total_rate()).expect("positive total rate");
    let mut jumps = Vec::new();
    let mut t = 0.0;
    loop {
        t += hold.sample(rng);
        if t > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut dir = kv.rates.len() - 1;
        for (i, k) in kv.rates.iter().enumerate() {
            if u < *k {
                dir = i;
                break;
            }
            u -= k;
        }
        jumps.push((t, dir as u8));
    }
    PolymerPath { dim: kv.dim, horizon, jumps }
}

pub fn sample_path_seeded(kv: &RateVector, horizon: f64, seed: u64) -> PolymerPath {
    let mut rng = seeding::rng(seed, &[stream::PATHS]);
    sample_path(kv, horizon, &mut rng)
}

/// Transition probabilities on a box with their accuracy certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionProbs {
    pub field: Field,
    /// Poisson tail dropped by the uniformization series.
    pub truncation_tail: f64,
    /// Upper bound on the probability of leaving the box before `t`.
    pub escape_bound: f64,
    /// Whether both bounds are below the requested tolerance.
    pub accurate: bool,
}

impl TransitionProbs {
    pub fn mass_deficit(&self) -> f64 {
        1.0 - self.field.sum()
    }
}

/// `P(X_t = x)` for `x` in the box, by uniformization with tail `< tol`.
///
/// Mass that leaves the box is lost; the certificate reports how much at most.
pub fn transition_probs(kv: &RateVector, t: f64, lbox: LatticeBox, tol: f64) -> Result<TransitionProbs> {
    if kv.dim != lbox.dim() {
        return Err(PolymerError::InvalidParameter("rate vector and box dimensions differ".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(PolymerError::InvalidParameter(format!("time {t} must be >= 0")));
    }
    let mut field = Field::delta_origin(lbox);
    let kernel = JumpKernel::new(lbox, &kv.rates);
    let truncation_tail = kernel.evolve(&mut field.values, t, tol, ExecMode::default());
    let escape_bound = box_exit_bound(kv, t, lbox.radius());
    Ok(TransitionProbs { accurate: truncation_tail < tol && escape_bound < tol, field, truncation_tail, escape_bound })
}

/// Bound on `P(sup_{s <= t} |X_s|_inf > radius)`.
///
/// Each coordinate is a difference of two Poisson processes; Doob's maximal
/// inequality for `exp(theta X_i)` gives a Chernoff bound per direction, and
/// the union over the `2d` directions bounds the exit probability. The
/// result is also capped by the jump-count bound (at least `radius + 1` jumps
/// are needed to leave).
pub fn box_exit_bound(kv: &RateVector, t: f64, radius: u32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let two_d = (2 * kv.dim) as f64;
    let level = radius as f64 + 1.0;
    let mut total = 0.0;
    for axis in 0..kv.dim {
        let up = kv.rate(axis, true) / two_d;
        let down = kv.rate(axis, false) / two_d;
        total += directional_exit_bound(up, down, t, level);
        total += directional_exit_bound(down, up, t, level);
    }
    total.min(jump_count_tail(kv.total_rate() * t, radius as f64 + 1.0)).min(1.0)
}

/// `inf_theta exp(-theta m + t max(psi(theta), 0))`, `psi(theta) = a(e^theta - 1) + b(e^-theta - 1)`.
fn directional_exit_bound(a: f64, b: f64, t: f64, m: f64) -> f64 {
    let objective = |th: f64| -th * m + t * (a * th.exp_m1() + b * (-th).exp_m1()).max(0.0);
    // unconstrained stationary point of -theta m + t psi(theta)
    let y = (m / t + ((m / t).powi(2) + 4.0 * a * b).sqrt()) / (2.0 * a);
    let star = y.ln().max(0.0);
    // the objective is convex; refine on [0, 2 star + 1] by golden section
    let (mut lo, mut hi) = (0.0, 2.0 * star + 1.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if objective(x1) < objective(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let best = objective(star).min(objective(0.5 * (lo + hi)));
    best.exp().min(1.0)
}

/// Chernoff bound `P(N >= k) <= e^{-mu} (e mu / k)^k` for `N ~ Poisson(mu)`, `k > mu`.
pub(crate) fn jump_count_tail(mu: f64, k: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    if k <= mu {
        return 1.0;
    }
    (-mu + k * (1.0 + (mu / k).ln())).exp().min(1.0)
}

/// Smallest radius whose exit bound over `[0, t]` is below `tol` for every
/// rate vector in `kvs`.
pub fn certified_radius(kvs: &[&RateVector], t: f64, tol: f64) -> u32 {
    let mut r = 1u32;
    let ok = |r: u32| kvs.iter().all(|kv| box_exit_bound(kv, t, r) < tol);
    while !ok(r) {
        r = (r * 2).max(r + 1);
    }
    // bisect down to the smallest passing radius
    let (mut lo, mut hi) = (r / 2, r);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rate_vector_validation() {
        assert!(RateVector::new(2, vec![1.0; 3]).is_err());
        assert!(RateVector::new(1, vec![1.0, 0.0]).is_err());
        assert!(RateVector::new(1, vec![1.0, f64::NAN]).is_err());
        let iso = RateVector::isotropic(3, 2.0).unwrap();
        assert!(iso.is_isotropic());
        assert_eq!(iso.total_rate(), 2.0);
    }

    #[test]
    fn cumulant_examples() {
        let kv = RateVector::isotropic(1, 1.0).unwrap();
        assert_eq!(cumulant(&kv, &[0.0]), 0.0);
        assert_relative_eq!(cumulant(&kv, &[1.0]), 1f64.cosh() - 1.0, max_relative = 1e-15);
        let kv3 = RateVector::isotropic(3, 2.5).unwrap();
        let l = [0.3, -0.7, 0.1];
        let iso: f64 = l.iter().map(|x: &f64| x.cosh() - 1.0).sum::<f64>() * 2.5 / 3.0;
        assert_relative_eq!(cumulant(&kv3, &l), iso, max_relative = 1e-14);
        assert_relative_eq!(cumulant(&kv3, &l), cumulant(&kv3, &[-0.3, 0.7, -0.1]), max_relative = 1e-15);
    }

    #[test]
    fn tilt_examples() {
        let t = tilt(2.0, &[0.0, 0.0]).unwrap();
        assert_eq!(t, RateVector::isotropic(2, 2.0).unwrap());
        let t = tilt(2.0, &[1.0]).unwrap();
        assert_relative_eq!(t.rates()[0], 2.0 * 1f64.exp(), max_relative = 1e-15);
        assert_relative_eq!(t.rates()[1], 2.0 * (-1f64).exp(), max_relative = 1e-15);
        assert!(tilt(0.0, &[1.0]).is_err());
    }

    #[test]
    fn kappa_bounds_examples() {
        let b = kappa_bounds(3.0, &[0.0, 0.0]).unwrap();
        assert_eq!((b.kappa_under, b.kappa_over), (3.0, 3.0));
        assert!(b.delta1.iter().chain(&b.delta2).all(|&d| d == 0.0));

        let e = 1f64.exp();
        let b = kappa_bounds(1.0, &[1.0]).unwrap();
        assert_relative_eq!(b.kappa_under, 1.0 / e, max_relative = 1e-15);
        assert_relative_eq!(b.kappa_over, e, max_relative = 1e-15);
        assert_relative_eq!(b.delta1[0], e - 1.0 / e, max_relative = 1e-15);
        assert_eq!(b.delta1[1], 0.0);
        assert_eq!(b.delta2[0], 0.0);
        assert_relative_eq!(b.delta2[1], e - 1.0 / e, max_relative = 1e-15);
        for (dir, k) in b.tilted.rates().iter().enumerate() {
            assert_eq!(b.kappa_under + b.delta1[dir], *k);
            assert_eq!(k + b.delta2[dir], b.kappa_over);
        }
    }

    #[test]
    fn bounds_converge_as_lambda_shrinks() {
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let l = 0.5f64.powi(k);
            let b = kappa_bounds(2.0, &[l, -l / 2.0, l / 3.0]).unwrap();
            let spread = (b.kappa_over - 2.0).abs().max((b.kappa_under - 2.0).abs());
            assert!(spread < prev);
            prev = spread;
        }
        assert!(prev < 2e-3);
    }

    #[test]
    fn rate_function_examples() {
        assert_eq!(rate_function_closed(1.7, &[0.0, 0.0]), 0.0);
        assert_eq!(rate_function_legendre(1.7, &[0.0, 0.0]), 0.0);
        let expect = 1f64.asinh() - 2f64.sqrt() + 1.0;
        assert_relative_eq!(rate_function_closed(1.0, &[1.0]), expect, max_relative = 1e-14);
        assert_relative_eq!(rate_function_legendre(1.0, &[1.0]), expect, max_relative = 1e-14);
        let x = [0.5, -0.2];
        assert_relative_eq!(rate_function_closed(3.0, &x), rate_function_legendre(3.0, &x), max_relative = 1e-12);
        assert_eq!(rate_function_closed(3.0, &x), rate_function_closed(3.0, &[0.2, -0.5]));
    }

    #[test]
    fn stable_asinh_matches_std_over_wide_range() {
        for &x in &[0.0, 1e-300, 1e-12, 1e-5, 0.3, 1.0, 17.0, 1e7, 1e9, 1e200] {
            assert_relative_eq!(stable_asinh(x), x.asinh(), max_relative = 1e-14);
            assert_relative_eq!(stable_asinh(-x), -x.asinh(), max_relative = 1e-14);
        }
    }

    #[test]
    fn rate_function_stable_for_huge_arguments() {
        let v = rate_function_closed(0.5, &[1e6 / 0.5]);
        assert!(v.is_finite() && v > 0.0);
        assert_relative_eq!(v, rate_function_legendre(0.5, &[1e6 / 0.5]), max_relative = 1e-12);
    }

    #[test]
    fn generator_examples() {
        let b = LatticeBox::new(1, 3).unwrap();
        let kv = RateVector::isotropic(1, 2.0).unwrap();
        let f = Field::from_fn(b, |c| if c[0] == 0 { 1.0 } else { 0.0 });
        let lf = generator_apply(&f, &kv, Boundary::Dirichlet).unwrap();
        assert_eq!(lf.get(&[0]), Some(-2.0));
        assert_eq!(lf.get(&[1]), Some(1.0));
        assert_eq!(lf.get(&[-1]), Some(1.0));
        assert_eq!(lf.get(&[2]), Some(0.0));

        let b2 = LatticeBox::new(2, 3).unwrap();
        let kv2 = RateVector::new(2, vec![1.0, 2.0, 0.5, 3.0]).unwrap();
        let c = Field::constant(b2, 4.2);
        let lc = generator_apply(&c, &kv2, Boundary::Periodic).unwrap();
        assert!(lc.values.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn sampled_path_is_cadlag_and_reproducible() {
        let kv = RateVector::isotropic(2, 3.0).unwrap();
        let p = sample_path_seeded(&kv, 2.0, 17);
        assert_eq!(p, sample_path_seeded(&kv, 2.0, 17));
        assert!(p.jumps.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(p.jumps.iter().all(|&(s, _)| s > 0.0 && s <= 2.0));
        let segs = p.segments();
        assert_eq!(segs.len(), p.jumps.len() + 1);
        assert_eq!(segs.last().unwrap().2, p.endpoint());
        if let Some(&(s, _)) = p.jumps.first() {
            assert_eq!(p.position_at(s - 1e-12), vec![0, 0]);
            assert_ne!(p.position_at(s), vec![0, 0]);
        }
    }

    #[test]
    fn transition_probs_at_time_zero() {
        let b = LatticeBox::new(2, 2).unwrap();
        let kv = RateVector::isotropic(2, 1.0).unwrap();
        let tp = transition_probs(&kv, 0.0, b, 1e-12).unwrap();
        assert_eq!(tp.field, Field::delta_origin(b));
        assert!(tp.accurate);
    }

    #[test]
    fn small_box_is_flagged() {
        let b = LatticeBox::new(1, 2).unwrap();
        let kv = RateVector::isotropic(1, 5.0).unwrap();
        let tp = transition_probs(&kv, 3.0, b, 1e-12).unwrap();
        assert!(!tp.accurate);
        assert!(tp.mass_deficit() > 0.0);
        assert!(tp.mass_deficit() <= tp.escape_bound + tp.truncation_tail);
    }

    #[test]
    fn exit_bound_properties() {
        let kv = RateVector::isotropic(3, 4.0).unwrap();
        assert_eq!(box_exit_bound(&kv, 0.0, 5), 0.0);
        let mut prev = 1.0;
        for r in 1..60 {
            let b = box_exit_bound(&kv, 2.0, r);
            assert!(b <= prev);
            prev = b;
        }
        assert!(box_exit_bound(&kv, 1.0, 10) <= box_exit_bound(&kv, 2.0, 10));
        let r = certified_radius(&[&kv], 2.0, 1e-12);
        assert!(box_exit_bound(&kv, 2.0, r) < 1e-12);
        assert!(box_exit_bound(&kv, 2.0, r - 1) >= 1e-12);
    }
}
