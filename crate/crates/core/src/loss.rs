//! Per-observation robust losses and their convex conjugates.
//!
//! Quadratic: `rho(r) = w r^2`, `rho*(a) = a^2 / (4w)`.
//!
//! Huber: `rho(r) = w r^2 / 2` for `|r| <= c`, `w (c |r| - c^2 / 2)` beyond,
//! with conjugate `a^2 / (2w)` on the box `|a| <= w c` and `+inf` outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    Quadratic { weight: f64 },
    Huber { weight: f64, cutoff: f64 },
}

impl LossSpec {
    pub fn quadratic(weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Invalid(format!(
                "loss weight must be > 0, got {weight}"
            )));
        }
        Ok(LossSpec::Quadratic { weight })
    }

    pub fn huber(weight: f64, cutoff: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Invalid(format!(
                "loss weight must be > 0, got {weight}"
            )));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Invalid(format!(
                "Huber cutoff must be > 0, got {cutoff}"
            )));
        }
        Ok(LossSpec::Huber { weight, cutoff })
    }

    pub fn weight(&self) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } | LossSpec::Huber { weight, .. } => weight,
        }
    }

    pub fn rho(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } => weight * r * r,
            LossSpec::Huber { weight, cutoff } => {
                let a = r.abs();
                if a <= cutoff {
                    weight * 0.5 * r * r
                } else {
                    weight * (cutoff * a - 0.5 * cutoff * cutoff)
                }
            }
        }
    }

    pub fn rho_prime(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } => 2.0 * weight * r,
            LossSpec::Huber { weight, cutoff } => weight * r.clamp(-cutoff, cutoff),
        }
    }

    /// Second derivative (zero on the linear Huber branch).
    pub fn rho_second(&self, r: f64) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } => 2.0 * weight,
            LossSpec::Huber { weight, cutoff } => {
                if r.abs() <= cutoff {
                    weight
                } else {
                    0.0
                }
            }
        }
    }

    /// Bounds of the conjugate's effective domain, `None` when unbounded.
    pub fn conj_box(&self) -> Option<(f64, f64)> {
        match *self {
            LossSpec::Quadratic { .. } => None,
            LossSpec::Huber { weight, cutoff } => Some((-weight * cutoff, weight * cutoff)),
        }
    }

    pub fn rho_conj(&self, alpha: f64) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } => alpha * alpha / (4.0 * weight),
            LossSpec::Huber { weight, cutoff } => {
                if alpha.abs() <= weight * cutoff {
                    alpha * alpha / (2.0 * weight)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn rho_conj_prime(&self, alpha: f64) -> Result<f64> {
        match *self {
            LossSpec::Quadratic { weight } => Ok(alpha / (2.0 * weight)),
            LossSpec::Huber { weight, cutoff } => {
                if alpha.abs() <= weight * cutoff {
                    Ok(alpha / weight)
                } else {
                    Err(Error::Domain(format!(
                        "conjugate derivative requested at {alpha}, outside the Huber box ±{}",
                        weight * cutoff
                    )))
                }
            }
        }
    }

    pub(crate) fn rho_conj_second(&self) -> f64 {
        match *self {
            LossSpec::Quadratic { weight } => 1.0 / (2.0 * weight),
            LossSpec::Huber { weight, .. } => 1.0 / weight,
        }
    }

    /// Distance from `r` to the subdifferential of the conjugate at `alpha`.
    /// Equals `|r - rho*'(alpha)|` wherever the conjugate is differentiable.
    pub fn conj_subgradient_gap(&self, alpha: f64, r: f64) -> f64 {
        match *self {
            LossSpec::Quadratic { .. } => (r - alpha / (2.0 * self.weight())).abs(),
            LossSpec::Huber { weight, cutoff } => {
                let bound = weight * cutoff;
                let slope = alpha / weight;
                if alpha >= bound * (1.0 - 1e-12) {
                    (cutoff - r).max(0.0)
                } else if alpha <= -bound * (1.0 - 1e-12) {
                    (r + cutoff).max(0.0)
                } else {
                    (r - slope).abs()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn values_and_derivatives() {
        let q = LossSpec::quadratic(1.0).unwrap();
        assert_eq!(q.rho(2.0), 4.0);
        assert_eq!(q.rho_prime(2.0), 4.0);

        let h = LossSpec::huber(1.0, 1.0).unwrap();
        assert_eq!(h.rho(3.0), 2.5);
        assert_eq!(h.rho_prime(3.0), 1.0);
        assert_eq!(h.rho_prime(-3.0), -1.0);

        for l in [q, h] {
            assert_eq!(l.rho(0.0), 0.0);
            assert_eq!(l.rho_prime(0.0), 0.0);
            assert_eq!(l.rho_conj(0.0), 0.0);
        }
    }

    #[test]
    fn conjugate_examples() {
        let q = LossSpec::quadratic(1.0).unwrap();
        // sup_r {2r - r^2}, by scanning r.
        let scanned = (0..=40_000)
            .map(|k| -2.0 + k as f64 * 1e-4)
            .map(|r| 2.0 * r - r * r)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(close(scanned, 1.0, 1e-12));
        assert_eq!(q.rho_conj(2.0), 1.0);

        let h = LossSpec::huber(1.0, 1.0).unwrap();
        assert!(h.rho_conj(2.0).is_infinite());
        assert!(matches!(h.rho_conj_prime(2.0), Err(Error::Domain(_))));
        assert_eq!(h.rho_conj_prime(0.5).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LossSpec::quadratic(0.0).is_err());
        assert!(LossSpec::huber(1.0, -1.0).is_err());
        assert!(LossSpec::huber(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn biconjugate_recovers_loss() {
        let specs = [
            LossSpec::quadratic(0.7).unwrap(),
            LossSpec::huber(1.3, 0.4).unwrap(),
        ];
        for l in specs {
            let (lo, hi) = l.conj_box().unwrap_or((-20.0, 20.0));
            for r in [-2.0, -0.3, 0.0, 0.1, 0.35, 1.7] {
                let n = 200_000;
                let sup = (0..=n)
                    .map(|k| lo + (hi - lo) * k as f64 / n as f64)
                    .map(|a| a * r - l.rho_conj(a))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(sup <= l.rho(r) + 1e-12);
                assert!(
                    close(sup, l.rho(r), 1e-6),
                    "{l:?} r={r}: {sup} vs {}",
                    l.rho(r)
                );
            }
        }
    }

    proptest! {
        #[test]
        fn fenchel_young(w in 0.1f64..5.0, c in 0.1f64..3.0, r in -5.0f64..5.0, a in -1.0f64..1.0) {
            for l in [LossSpec::quadratic(w).unwrap(), LossSpec::huber(w, c).unwrap()] {
                let alpha = match l.conj_box() {
                    Some((_, hi)) => a * hi,
                    None => 10.0 * a,
                };
                prop_assert!(l.rho(r) + l.rho_conj(alpha) >= alpha * r - 1e-12);
                let tight = l.rho_prime(r);
                prop_assert!((l.rho(r) + l.rho_conj(tight) - tight * r).abs() <= 1e-9 * (1.0 + l.rho(r)));
            }
        }

        #[test]
        fn conjugate_derivative_inverts_derivative(w in 0.1f64..5.0, c in 0.1f64..3.0, u in -0.999f64..0.999) {
            let q = LossSpec::quadratic(w).unwrap();
            let r = 4.0 * u;
            prop_assert!((q.rho_conj_prime(q.rho_prime(r)).unwrap() - r).abs() <= 1e-12 * (1.0 + r.abs()));
            let h = LossSpec::huber(w, c).unwrap();
            let r = c * u;
            prop_assert!((h.rho_conj_prime(h.rho_prime(r)).unwrap() - r).abs() <= 1e-9);
        }
    }
}
