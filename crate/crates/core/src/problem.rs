//! Observations and the fixed part of a fitting problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::rkhs::SobolevParams;

/// Measurements `y_i` of the unknown function at abscissae `t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    t: Vec<f64>,
    y: Vec<f64>,
    sigma: Option<Vec<f64>>,
}

impl Observations {
    /// Requires strictly increasing `t` in `[0, 1]` and positive `sigma`.
    pub fn new(t: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Invalid(format!(
                "{} abscissae but {} values",
                t.len(),
                y.len()
            )));
        }
        if t.is_empty() {
            return Err(Error::Invalid("no observations".into()));
        }
        if let Some(bad) = t.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("abscissa {bad} outside [0, 1]")));
        }
        if let Some(w) = t.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "abscissae must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value {bad}")));
        }
        if let Some(s) = &sigma {
            if s.len() != t.len() {
                return Err(Error::Invalid("sigma length differs from t".into()));
            }
            if let Some(bad) = s.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Invalid(format!("sigma must be > 0, got {bad}")));
            }
        }
        Ok(Self { t, y, sigma })
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma(&self) -> Option<&[f64]> {
        self.sigma.as_deref()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Same abscissae and scales with new values.
    pub fn with_values(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.t.clone(), y, self.sigma.clone())
    }

    /// `w_i = 1 / (N sigma_i^2)`, or `1 / N` without scales.
    pub fn default_weights(&self) -> Vec<f64> {
        let n = self.len() as f64;
        match &self.sigma {
            Some(s) => s.iter().map(|si| 1.0 / (n * si * si)).collect(),
            None => vec![1.0 / n; self.len()],
        }
    }
}

/// Penalty order and exponent, smoothing parameter and per-point losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub params: SobolevParams,
    pub lambda: f64,
    pub losses: Vec<LossSpec>,
}

impl ProblemSpec {
    pub fn new(params: SobolevParams, lambda: f64, losses: Vec<LossSpec>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda must be > 0, got {lambda}")));
        }
        if losses.is_empty() {
            return Err(Error::Invalid("no loss specifications".into()));
        }
        Ok(Self {
            params,
            lambda,
            losses,
        })
    }

    /// Quadratic losses with the default weights of `obs`.
    pub fn quadratic(params: SobolevParams, lambda: f64, obs: &Observations) -> Result<Self> {
        let losses = obs
            .default_weights()
            .into_iter()
            .map(LossSpec::quadratic)
            .collect::<Result<_>>()?;
        Self::new(params, lambda, losses)
    }

    /// Huber losses with cutoff `c` and the default weights of `obs`.
    pub fn huber(
        params: SobolevParams,
        lambda: f64,
        cutoff: f64,
        obs: &Observations,
    ) -> Result<Self> {
        let losses = obs
            .default_weights()
            .into_iter()
            .map(|w| LossSpec::huber(w, cutoff))
            .collect::<Result<_>>()?;
        Self::new(params, lambda, losses)
    }

    pub(crate) fn check_against(&self, obs: &Observations) -> Result<()> {
        if self.losses.len() != obs.len() {
            return Err(Error::Invalid(format!(
                "{} loss specs for {} observations",
                self.losses.len(),
                obs.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_validation() {
        assert!(Observations::new(vec![0.1, 0.9], vec![1.0, 2.0], None).is_ok());
        assert!(Observations::new(vec![0.1, 0.1], vec![1.0, 2.0], None).is_err());
        assert!(Observations::new(vec![0.1, 1.1], vec![1.0, 2.0], None).is_err());
        assert!(Observations::new(vec![0.1, 0.2], vec![1.0], None).is_err());
        assert!(Observations::new(vec![0.1, 0.2], vec![1.0, 2.0], Some(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn weights_follow_sigma() {
        let o = Observations::new(vec![0.0, 1.0], vec![0.0, 0.0], Some(vec![1.0, 0.5])).unwrap();
        assert_eq!(o.default_weights(), vec![0.5, 2.0]);
        let o = Observations::new(vec![0.0, 0.5, 1.0], vec![0.0; 3], None).unwrap();
        assert_eq!(o.default_weights(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn lambda_must_be_positive() {
        let p = SobolevParams::new(2, 2.0).unwrap();
        let l = vec![LossSpec::quadratic(1.0).unwrap()];
        assert!(ProblemSpec::new(p, 0.0, l.clone()).is_err());
        assert!(ProblemSpec::new(p, 1e-3, l).is_ok());
    }
}
