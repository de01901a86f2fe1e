//! Quadrature grids and cell-wise piecewise-linear functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes closer than this to an inserted point are snapped onto it.
const SNAP: f64 = 1e-12;

/// Uniform grid on `[0, 1]` with extra nodes inserted at prescribed points.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
}

impl QuadratureGrid {
    pub fn uniform(cells: usize) -> Result<Self> {
        Self::augmented(cells, &[])
    }

    /// `cells + 1` uniform nodes plus every point of `extra` (all in `[0, 1]`).
    pub fn augmented(cells: usize, extra: &[f64]) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Invalid(
                "quadrature grid needs at least one cell".into(),
            ));
        }
        let mut nodes: Vec<f64> = (0..=cells).map(|j| j as f64 / cells as f64).collect();
        for &x in extra {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("grid point {x} outside [0, 1]")));
            }
            let pos = nodes.partition_point(|&n| n < x);
            let near_left = pos > 0 && (x - nodes[pos - 1]).abs() <= SNAP;
            let near_right = pos < nodes.len() && (nodes[pos] - x).abs() <= SNAP;
            if near_right {
                nodes[pos] = x;
            } else if near_left {
                nodes[pos - 1] = x;
            } else {
                nodes.insert(pos, x);
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }
}

/// A function that is linear on each cell and may jump between cells.
///
/// Cell `k` spans `[a_k, b_k]` with endpoint values `(va_k, vb_k)`; cells are
/// contiguous and ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    a: Vec<f64>,
    b: Vec<f64>,
    va: Vec<f64>,
    vb: Vec<f64>,
}

impl CellFunction {
    /// Continuous piecewise-linear interpolant of node values.
    pub fn from_nodes(nodes: &[f64], values: &[f64]) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::Invalid(
                "need at least two nodes with one value each".into(),
            ));
        }
        let n = nodes.len() - 1;
        let mut f = Self::with_capacity(n);
        for k in 0..n {
            f.push(nodes[k], nodes[k + 1], values[k], values[k + 1])?;
        }
        Ok(f)
    }

    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            va: Vec::with_capacity(n),
            vb: Vec::with_capacity(n),
        }
    }

    pub(crate) fn push(&mut self, a: f64, b: f64, va: f64, vb: f64) -> Result<()> {
        if b < a || self.b.last().is_some_and(|&prev| prev != a) {
            return Err(Error::Invalid(format!("cell [{a}, {b}] breaks contiguity")));
        }
        self.a.push(a);
        self.b.push(b);
        self.va.push(va);
        self.vb.push(vb);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.a.first().copied().unwrap_or(f64::NAN)
    }

    pub fn end(&self) -> f64 {
        self.b.last().copied().unwrap_or(f64::NAN)
    }

    /// `(a, b, va, vb)` for every cell.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.len()).map(|k| (self.a[k], self.b[k], self.va[k], self.vb[k]))
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        !self.is_empty() && self.start() <= lo && hi <= self.end()
    }

    /// Value at `t`; at a shared node the right-hand cell wins, except at the end.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !self.covers(t, t) {
            return Err(Error::Domain(format!(
                "t = {t} outside [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let k = self.b.partition_point(|&b| b <= t).min(self.len() - 1);
        Ok(self.interp(k, t))
    }

    fn interp(&self, k: usize, t: f64) -> f64 {
        let (a, b) = (self.a[k], self.b[k]);
        if b == a {
            return self.va[k];
        }
        let u = (t - a) / (b - a);
        self.va[k] + u * (self.vb[k] - self.va[k])
    }

    /// Trapezoid rule for `∫_start^t weight(s) f(s) ds`, splitting the cell
    /// that contains `t`.
    pub fn integrate_to(&self, t: f64, weight: impl Fn(f64) -> f64) -> Result<f64> {
        if !self.covers(self.start(), t) || t < self.start() {
            return Err(Error::Domain(format!(
                "integration limit {t} not covered by [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let mut acc = 0.0;
        for k in 0..self.len() {
            let (a, b) = (self.a[k], self.b[k]);
            if a >= t {
                break;
            }
            if b <= t {
                acc += 0.5 * (b - a) * (weight(a) * self.va[k] + weight(b) * self.vb[k]);
            } else {
                let vt = self.interp(k, t);
                acc += 0.5 * (t - a) * (weight(a) * self.va[k] + weight(t) * vt);
            }
        }
        Ok(acc)
    }

    /// Trapezoid rule for `∫ phi(f(s)) ds` over the whole support.
    pub fn integrate_map(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.cells()
            .map(|(a, b, va, vb)| 0.5 * (b - a) * (phi(va) + phi(vb)))
            .sum()
    }

    /// Node list and one value per node (right-hand limit, left-hand at the end).
    pub fn node_values(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = self.a.clone();
        let mut v = self.va.clone();
        if let (Some(&b), Some(&vb)) = (self.b.last(), self.vb.last()) {
            x.push(b);
            v.push(vb);
        }
        (x, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmented_grid_inserts_and_snaps() {
        let g = QuadratureGrid::augmented(4, &[0.3, 0.5 + 1e-14, 0.3]).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.3, 0.5 + 1e-14, 0.75, 1.0]);
        assert!(QuadratureGrid::augmented(4, &[1.5]).is_err());
        assert!(QuadratureGrid::uniform(0).is_err());
    }

    #[test]
    fn cell_function_eval_and_integrate() {
        let f = CellFunction::from_nodes(&[0.0, 0.5, 1.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.25).unwrap(), 0.5);
        assert_eq!(f.eval(1.0).unwrap(), 0.0);
        assert!(f.eval(1.1).is_err());
        assert!((f.integrate_to(1.0, |_| 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((f.integrate_to(0.25, |_| 1.0).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn jumps_between_cells() {
        let mut f = CellFunction::with_capacity(2);
        f.push(0.0, 0.5, 1.0, 1.0).unwrap();
        f.push(0.5, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(f.eval(0.5).unwrap(), 0.0);
        assert_eq!(f.eval(0.4999).unwrap(), 1.0);
        assert!((f.integrate_to(1.0, |_| 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(f.push(0.7, 1.0, 0.0, 0.0).is_err());
    }
}
