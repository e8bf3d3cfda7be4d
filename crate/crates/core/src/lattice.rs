//! Finite boxes of Z^d and real-valued fields on them.

use serde::{Deserialize, Serialize};

use crate::error::{PolymerError, Result};

/// Hard cap on the number of sites a box may hold.
pub const MAX_SITES: usize = 60_000_000;

/// Boundary treatment for operators that look past the edge of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Neighbours outside the box hold the value 0 (absorbing).
    Dirichlet,
    /// Coordinates wrap around modulo the side length.
    Periodic,
}

/// The sites `x` of Z^d with `|x|_inf <= radius`.
///
/// Sites are stored with axis 0 varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    dim: usize,
    radius: u32,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: u32) -> Result<Self> {
        if dim == 0 {
            return Err(PolymerError::InvalidParameter("dimension must be >= 1".into()));
        }
        if radius < 1 {
            return Err(PolymerError::InvalidParameter("box radius must be >= 1".into()));
        }
        let side = 2 * radius as usize + 1;
        let sites = side.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if sites > MAX_SITES {
            return Err(PolymerError::BoxTooLarge { sites, limit: MAX_SITES });
        }
        Ok(LatticeBox { dim, radius })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of each axis in the linear layout.
    pub fn strides(&self) -> Vec<usize> {
        let side = self.side();
        (0..self.dim).map(|i| side.pow(i as u32)).collect()
    }

    pub fn contains(&self, coords: &[i32]) -> bool {
        coords.len() == self.dim && coords.iter().all(|c| c.unsigned_abs() <= self.radius)
    }

    pub fn index_of(&self, coords: &[i32]) -> Option<usize> {
        if !self.contains(coords) {
            return None;
        }
        let side = self.side();
        let r = self.radius as i64;
        let mut idx = 0usize;
        for &c in coords.iter().rev() {
            idx = idx * side + (c as i64 + r) as usize;
        }
        Some(idx)
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let r = self.radius as i64;
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(((idx % side) as i64 - r) as i32);
            idx /= side;
        }
        out
    }

    pub fn origin_index(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// Iterate over all site coordinates in storage order.
    pub fn sites(&self) -> impl Iterator<Item = Vec<i32>> + '_ {
        (0..self.len()).map(move |i| self.coords_of(i))
    }

    /// Whether `inner` is a sub-box of `self` (same dimension, smaller radius).
    pub fn covers(&self, inner: &LatticeBox) -> bool {
        self.dim == inner.dim && self.radius >= inner.radius
    }

    /// For every site of `inner`, its linear index in `self`.
    pub fn embedding(&self, inner: &LatticeBox) -> Option<Vec<usize>> {
        if !self.covers(inner) {
            return None;
        }
        Some(inner.sites().map(|c| self.index_of(&c).expect("covered")).collect())
    }
}

/// A real value per site of a [`LatticeBox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub lbox: LatticeBox,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(lbox: LatticeBox) -> Self {
        Field { values: vec![0.0; lbox.len()], lbox }
    }

    pub fn constant(lbox: LatticeBox, value: f64) -> Self {
        Field { values: vec![value; lbox.len()], lbox }
    }

    /// Indicator of the origin, the initial condition of the point-to-point problem.
    pub fn delta_origin(lbox: LatticeBox) -> Self {
        let mut f = Field::zeros(lbox);
        f.values[lbox.origin_index()] = 1.0;
        f
    }

    pub fn from_fn(lbox: LatticeBox, f: impl Fn(&[i32]) -> f64) -> Self {
        let values = lbox.sites().map(|c| f(&c)).collect();
        Field { lbox, values }
    }

    pub fn get(&self, coords: &[i32]) -> Option<f64> {
        self.lbox.index_of(coords).map(|i| self.values[i])
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.lbox.origin_index()]
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.lbox, other.lbox, "fields live on different boxes");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Restrict to a smaller concentric box.
    pub fn restrict(&self, inner: LatticeBox) -> Option<Field> {
        let emb = self.lbox.embedding(&inner)?;
        Some(Field { lbox: inner, values: emb.iter().map(|&i| self.values[i]).collect() })
    }

    /// Mirror image `x -> -x`.
    pub fn mirrored(&self) -> Field {
        let n = self.values.len();
        // reversing the linear order negates every coordinate
        Field { lbox: self.lbox, values: (0..n).map(|i| self.values[n - 1 - i]).collect() }
    }
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 128;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let b = LatticeBox::new(3, 2).unwrap();
        assert_eq!(b.len(), 125);
        for i in 0..b.len() {
            assert_eq!(b.index_of(&b.coords_of(i)), Some(i));
        }
        assert_eq!(b.coords_of(b.origin_index()), vec![0, 0, 0]);
        assert_eq!(b.index_of(&[3, 0, 0]), None);
        assert_eq!(b.index_of(&[0, 0]), None);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(LatticeBox::new(0, 3).is_err());
        assert!(LatticeBox::new(2, 0).is_err());
        assert!(matches!(LatticeBox::new(3, 10_000), Err(PolymerError::BoxTooLarge { .. })));
    }

    #[test]
    fn mirror_negates_coordinates() {
        let b = LatticeBox::new(2, 3).unwrap();
        let f = Field::from_fn(b, |c| (c[0] * 10 + c[1]) as f64);
        let m = f.mirrored();
        for c in b.sites() {
            let neg: Vec<i32> = c.iter().map(|x| -x).collect();
            assert_eq!(m.get(&c), f.get(&neg));
        }
    }

    #[test]
    fn restriction_keeps_values() {
        let big = LatticeBox::new(2, 4).unwrap();
        let small = LatticeBox::new(2, 2).unwrap();
        let f = Field::from_fn(big, |c| (c[0] - 3 * c[1]) as f64);
        let g = f.restrict(small).unwrap();
        for c in small.sites() {
            assert_eq!(g.get(&c), f.get(&c));
        }
        assert!(g.restrict(big).is_none());
    }
}
