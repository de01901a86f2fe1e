//! Piecewise ℓ-convexity constraints.
//!
//! A [`ChangePointConfig`] fixes the order `ell` of the constrained derivative,
//! the ordered change points `x_1 <= ... <= x_K` and the orientation of the
//! first interval. Between consecutive change points the constrained
//! derivative must carry the sign returned by [`ChangePointConfig::chi`].
//! Repeated change points bound an empty interval, so a pair of equal points
//! cancels out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the constrained derivative on the first interval `(0, x_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> i8 {
        match self {
            Orientation::Positive => 1,
            Orientation::Negative => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::Positive => Orientation::Negative,
            Orientation::Negative => Orientation::Positive,
        }
    }

    pub fn both() -> [Orientation; 2] {
        [Orientation::Positive, Orientation::Negative]
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+1" | "1" | "+" | "pos" | "positive" => Ok(Orientation::Positive),
            "-1" | "-" | "neg" | "negative" => Ok(Orientation::Negative),
            other => Err(Error::Invalid(format!(
                "orientation must be +1 or -1, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Orientation::Positive => write!(f, "+1"),
            Orientation::Negative => write!(f, "-1"),
        }
    }
}

/// Prescribed change points of ℓ-convexity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointConfig {
    ell: usize,
    points: Vec<f64>,
    orientation: Orientation,
}

impl ChangePointConfig {
    /// Builds a configuration. Points are sorted; each must lie in `[0, 1]`.
    pub fn new(ell: usize, mut points: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Invalid("convexity order ell must be >= 1".into()));
        }
        if let Some(bad) = points.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!("change point {bad} outside [0, 1]")));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self {
            ell,
            points,
            orientation,
        })
    }

    /// No change points: a single interval carrying `orientation`.
    pub fn single(ell: usize, orientation: Orientation) -> Result<Self> {
        Self::new(ell, Vec::new(), orientation)
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points, opposite orientation.
    pub fn flipped(&self) -> Self {
        Self {
            ell: self.ell,
            points: self.points.clone(),
            orientation: self.orientation.flipped(),
        }
    }

    /// Removes adjacent pairs of equal change points. The sign function is
    /// unchanged everywhere except on the (empty) intervals between them.
    pub fn collapsed(&self) -> Self {
        let mut kept: Vec<f64> = Vec::with_capacity(self.points.len());
        for &x in &self.points {
            if kept.last() == Some(&x) {
                kept.pop();
            } else {
                kept.push(x);
            }
        }
        Self {
            ell: self.ell,
            points: kept,
            orientation: self.orientation,
        }
    }

    /// Sign pattern `chi(t)`: `orientation * (-1)^j` on the open interval
    /// following the `j`-th change point, `0` at every change point.
    pub fn chi(&self, t: f64) -> Result<i8> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
        }
        Ok(self.chi_unchecked(t))
    }

    pub(crate) fn chi_unchecked(&self, t: f64) -> i8 {
        let mut below = 0usize;
        for &x in &self.points {
            if x == t {
                return 0;
            }
            if x < t {
                below += 1;
            }
        }
        if below.is_multiple_of(2) {
            self.orientation.sign()
        } else {
            -self.orientation.sign()
        }
    }

    /// Checks `chi(t_j) * f^(ell)(t_j) >= -tol` on a caller supplied grid.
    pub fn is_feasible(&self, grid: &[f64], deriv: &[f64], tol: f64) -> bool {
        grid.iter()
            .zip(deriv)
            .all(|(&t, &d)| f64::from(self.chi_unchecked(t.clamp(0.0, 1.0))) * d >= -tol)
    }

    /// Membership of `g` in the negative polar cone for `ell = m`:
    /// the boundary values `g^(j)(0)`, `j < m`, vanish and
    /// `chi * g^(m) <= 0` on the grid.
    pub fn polar_member_ellm(
        &self,
        m: usize,
        grid: &[f64],
        deriv: &[f64],
        boundary: &[f64],
        tol: f64,
    ) -> Result<bool> {
        if self.ell != m {
            return Err(Error::Unsupported(format!(
                "polar membership is only available for ell = m (ell = {}, m = {m})",
                self.ell
            )));
        }
        if boundary.len() != m {
            return Err(Error::Invalid(format!(
                "expected {m} boundary values, got {}",
                boundary.len()
            )));
        }
        let boundary_ok = boundary.iter().all(|b| b.abs() <= tol);
        let sign_ok = grid
            .iter()
            .zip(deriv)
            .all(|(&t, &d)| f64::from(self.chi_unchecked(t.clamp(0.0, 1.0))) * d <= tol);
        Ok(boundary_ok && sign_ok)
    }
}
