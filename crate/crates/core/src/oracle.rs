//! Reference computations that share no code with the production routes.
//!
//! The walk probabilities come from the modified Bessel series, the rate
//! function from a brute-force grid search refined by golden section. They
//! are slow and are meant for tests and the verification battery.

/// `e^{-t} I_n(t)` by its power series, summed in log space.
pub fn bessel_i_scaled(n: i64, t: f64) -> f64 {
    assert!(t >= 0.0, "t must be nonnegative");
    let n = n.unsigned_abs() as f64;
    if t == 0.0 {
        return if n == 0.0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * t;
    // leading term (t/2)^n / n! e^{-t}
    let mut log_term = n * half.ln() - ln_gamma_int(n as u64) - t;
    let mut sum = 0.0;
    let mut k = 0.0_f64;
    loop {
        let term = log_term.exp();
        sum += term;
        k += 1.0;
        log_term += 2.0 * half.ln() - k.ln() - (k + n).ln();
        if k > half && log_term.exp() < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn ln_gamma_int(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `P(X_t = x)` for the one-dimensional walk with total rate `kappa`.
pub fn walk_probability_1d(kappa: f64, t: f64, x: i64) -> f64 {
    bessel_i_scaled(x, kappa * t)
}

/// `sup_l { l x - (kappa/d)(cosh l - 1) }` for one coordinate, by a grid scan
/// followed by golden-section refinement.
pub fn legendre_coordinate_brute_force(kappa: f64, d: usize, x: f64) -> f64 {
    let c = kappa / d as f64;
    let f = |l: f64| l * x - c * (l.cosh() - 1.0);
    // the maximizer satisfies sinh l = x / c, so |l| <= ln(2|x|/c + 2)
    let reach = (2.0 * x.abs() / c + 2.0).ln() + 1.0;
    let n = 4000;
    let (mut best, mut best_l) = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let l = -reach + 2.0 * reach * i as f64 / n as f64;
        let v = f(l);
        if v > best {
            best = v;
            best_l = l;
        }
    }
    let h = 2.0 * reach / n as f64;
    let (mut lo, mut hi) = (best_l - h, best_l + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) > f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi)).max(best)
}

/// Brute-force Legendre transform of the isotropic cumulant.
pub fn rate_function_brute_force(kappa: f64, x: &[f64]) -> f64 {
    x.iter().map(|&xi| legendre_coordinate_brute_force(kappa, x.len(), xi)).sum()
}

/// Discrete convolution of two fields on `(2R+1)^d` boxes, returned on the
/// box of radius `2R`.
pub fn convolve(a: &crate::lattice::Field, b: &crate::lattice::Field) -> crate::lattice::Field {
    use crate::lattice::{Field, LatticeBox};
    let lbox = a.lbox;
    let big = LatticeBox::new(lbox.dim(), 2 * lbox.radius()).expect("box");
    let mut out = Field::zeros(big);
    let sites: Vec<Vec<i32>> = lbox.sites().collect();
    for (x, &va) in sites.iter().zip(&a.values) {
        if va == 0.0 {
            continue;
        }
        for (y, &vb) in sites.iter().zip(&b.values) {
            let z: Vec<i32> = x.iter().zip(y).map(|(p, q)| p + q).collect();
            let i = big.index_of(&z).expect("inside");
            out.values[i] += va * vb;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_known_values() {
        // e^{-1} I_0(1) and e^{-1} I_1(1)
        assert!((bessel_i_scaled(0, 1.0) - 0.465_759_607_593_640_4).abs() < 1e-15);
        assert!((bessel_i_scaled(1, 1.0) - 0.207_910_415_349_708_4).abs() < 1e-15);
        let total: f64 = (-60..=60).map(|n| bessel_i_scaled(n, 3.0)).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn brute_force_rate_matches_known_value() {
        // asinh(1) - sqrt(2) + 1
        assert!((rate_function_brute_force(1.0, &[1.0]) - 0.467_160_024_646_448_0).abs() < 1e-12);
        assert_eq!(rate_function_brute_force(2.0, &[0.0, 0.0]), 0.0);
    }
}
