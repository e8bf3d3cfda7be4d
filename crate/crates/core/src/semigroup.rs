//! Heat semigroup of a nearest-neighbour walk on a Dirichlet box, by
//! uniformization.
//!
//! For a walk with total jump rate `q` and step law `p_e`, the forward
//! evolution over time `tau` is `sum_n Pois(n; q tau) K^n u` where
//! `(K u)(y) = sum_e p_e u(y - e)`, with mass leaving the box discarded. The
//! series is cut once the Poisson tail is certified below the tolerance.

use crate::lattice::LatticeBox;
use crate::par::{self, ExecMode};

/// Poisson(`mean`) probabilities `0..=N` with a certified bound on the mass beyond `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWeights {
    pub weights: Vec<f64>,
    pub tail_bound: f64,
}

impl PoissonWeights {
    pub fn new(mean: f64, tol: f64) -> Self {
        assert!(mean >= 0.0 && mean.is_finite(), "Poisson mean must be finite and >= 0");
        if mean == 0.0 {
            return PoissonWeights { weights: vec![1.0], tail_bound: 0.0 };
        }
        // Ratios taken outward from the mode keep every weight accurate to a
        // few ulps, even where exp(-mean) underflows.
        let mode = mean.floor() as usize;
        let mut weights = vec![0.0; mode + 1];
        weights[mode] = 1.0;
        for n in (1..=mode).rev() {
            weights[n - 1] = weights[n] * n as f64 / mean;
        }
        let mut total: f64 = weights.iter().rev().sum();
        let cap = (mean + 60.0 * mean.sqrt() + 200.0).ceil() as usize;
        let mut n = mode;
        let tail_bound = loop {
            // P(N > n) <= w_{n+1} / (1 - mean / (n + 2)) once n + 2 > mean
            let next = weights[n] * mean / (n + 1) as f64;
            let tail = next / (1.0 - mean / (n + 2) as f64) / total;
            if tail < tol || n >= cap {
                break tail;
            }
            weights.push(next);
            total += next;
            n += 1;
        };
        for w in &mut weights {
            *w /= total;
        }
        PoissonWeights { weights, tail_bound }
    }

    /// Highest retained jump count.
    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }
}

/// One-step jump kernel of an anisotropic nearest-neighbour walk on a box.
#[derive(Debug, Clone)]
pub struct JumpKernel {
    lbox: LatticeBox,
    /// Step probabilities ordered `(+e_0, -e_0, +e_1, -e_1, ...)`.
    probs: Vec<f64>,
    total_rate: f64,
}

impl JumpKernel {
    /// `rates` ordered as in [`crate::ctrw::RateVector`]; the walk jumps in
    /// direction `e` at rate `rates[e] / (2d)`.
    pub fn new(lbox: LatticeBox, rates: &[f64]) -> Self {
        assert_eq!(rates.len(), 2 * lbox.dim(), "need 2d rates");
        let two_d = (2 * lbox.dim()) as f64;
        let total_rate: f64 = rates.iter().map(|k| k / two_d).sum();
        let probs = rates.iter().map(|k| k / two_d / total_rate).collect();
        JumpKernel { lbox, probs, total_rate }
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn lattice_box(&self) -> LatticeBox {
        self.lbox
    }

    /// Evolve `u` forward by `tau`. Returns the Poisson tail bound used, which
    /// bounds the l1 truncation error relative to `|u|_1`.
    pub fn evolve(&self, u: &mut Vec<f64>, tau: f64, tol: f64, mode: ExecMode) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let w = PoissonWeights::new(self.total_rate * tau, tol);
        let mut acc: Vec<f64> = u.iter().map(|x| x * w.weights[0]).collect();
        let mut next = vec![0.0; u.len()];
        for &wn in &w.weights[1..] {
            self.step_accumulate(u, &mut next, &mut acc, wn, mode);
            std::mem::swap(u, &mut next);
        }
        *u = acc;
        w.tail_bound
    }

    /// `out = K v`, then `acc += weight * out`.
    ///
    /// Work is split into chunks of whole planes (for the parallel mode) and
    /// processed row by row, so each row's neighbours are read from cache.
    pub fn step_accumulate(&self, v: &[f64], out: &mut [f64], acc: &mut [f64], weight: f64, mode: ExecMode) {
        let d = self.lbox.dim();
        let side = self.lbox.side();
        let plane = side.pow((d - 1) as u32);
        let planes_per_chunk = (2048 / plane).clamp(1, side);
        let chunk = planes_per_chunk * plane;
        let probs = &self.probs;
        let strides = self.lbox.strides();
        let rows_per_chunk = chunk / side;

        par::zip_chunks_mut(mode, out, acc, chunk, |ci, out_chunk, acc_chunk| {
            let first_row = ci * rows_per_chunk;
            for (k, (o, a)) in out_chunk.chunks_mut(side).zip(acc_chunk.chunks_mut(side)).enumerate() {
                let row = first_row + k;
                let base = row * side;
                let vr = &v[base..base + side];
                // axis 0 inside the row
                o[0] = probs[1] * vr[1];
                for i in 1..side - 1 {
                    o[i] = probs[0] * vr[i - 1] + probs[1] * vr[i + 1];
                }
                o[side - 1] = probs[0] * vr[side - 2];
                // higher axes shift whole rows
                let mut r = row;
                for axis in 1..d {
                    let c = r % side;
                    r /= side;
                    let st = strides[axis];
                    if c >= 1 {
                        saxpy(o, probs[2 * axis], &v[base - st..base - st + side]);
                    }
                    if c + 1 < side {
                        saxpy(o, probs[2 * axis + 1], &v[base + st..base + st + side]);
                    }
                }
                saxpy(a, weight, o);
            }
        });
    }
}

#[inline]
fn saxpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_weights_sum_to_one_minus_tail() {
        for &m in &[0.0, 1e-3, 0.5, 3.0, 40.0, 320.0, 1500.0] {
            let w = PoissonWeights::new(m, 1e-12);
            let s: f64 = w.weights.iter().sum();
            assert!(w.tail_bound < 1e-12);
            assert!((1.0 - s).abs() < 1e-13, "mean {m}: 1 - sum = {}", 1.0 - s);
            if m > 0.0 {
                // compare against the direct pmf near the mode
                let k = m.floor();
                let direct = (k * m.ln() - m - ln_factorial(k as u64)).exp();
                assert!((w.weights[k as usize] - direct).abs() < 1e-10 * direct);
            }
        }
    }

    fn ln_factorial(n: u64) -> f64 {
        (1..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn stencil_matches_direct_neighbour_sum() {
        let b = LatticeBox::new(3, 2).unwrap();
        let rates = [1.0, 2.0, 3.0, 0.5, 0.7, 1.1];
        let k = JumpKernel::new(b, &rates);
        let v: Vec<f64> = (0..b.len()).map(|i| ((i * 37) % 11) as f64 + 0.25).collect();
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let mut out = vec![0.0; b.len()];
            let mut acc = vec![0.0; b.len()];
            k.step_accumulate(&v, &mut out, &mut acc, 2.0, mode);
            for (y, coords) in b.sites().enumerate() {
                let mut expect = 0.0;
                for axis in 0..3 {
                    for (dir, sign) in [(0, 1), (1, -1)] {
                        let mut from = coords.clone();
                        from[axis] -= sign;
                        if let Some(i) = b.index_of(&from) {
                            expect += k.probs[2 * axis + dir] * v[i];
                        }
                    }
                }
                assert!((out[y] - expect).abs() < 1e-12);
                assert!((acc[y] - 2.0 * expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evolve_conserves_mass_far_from_boundary() {
        let b = LatticeBox::new(2, 25).unwrap();
        let k = JumpKernel::new(b, &[1.0; 4]);
        let mut u = vec![0.0; b.len()];
        u[b.origin_index()] = 1.0;
        let tail = k.evolve(&mut u, 1.0, 1e-13, ExecMode::Sequential);
        assert!(tail < 1e-13);
        let mass: f64 = u.iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(u.iter().all(|&x| x >= 0.0));
    }
}
