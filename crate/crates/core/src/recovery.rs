//! Primal spline from a dual solution.
//!
//! `f^(m) = sign(w) (|w| / lambda)^{q-1}` with `w` the truncated representer
//! sum, and the Taylor coefficients `a_j = f^(j)(0)` from the data relations
//! `y_i - f(t_i) = rho_i*'(alpha_i)`, solved in the least-squares sense.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cone::ChangePointConfig;
use crate::dual::{DualProblem, DualSolution};
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::quadrature::CellFunction;
use crate::rkhs::{evaluate_from_parts, poly_basis, taylor_weight, SobolevParams};

/// A fitted spline: Taylor coefficients at 0 plus a cell-wise linear `f^(m)`.
#[derive(Debug, Clone, Serialize)]
pub struct SplineEstimate {
    pub a: Vec<f64>,
    pub deriv: CellFunction,
    pub fitted: Vec<f64>,
    /// Largest residual of the least-squares system for `a`.
    pub polynomial_residual: f64,
    #[serde(skip)]
    params: SobolevParams,
    #[serde(skip)]
    config: ChangePointConfig,
}

impl SplineEstimate {
    pub fn params(&self) -> &SobolevParams {
        &self.params
    }

    pub fn config(&self) -> &ChangePointConfig {
        &self.config
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        evaluate_from_parts(&self.params, &self.a, &self.deriv, t)
    }

    pub fn deriv_at(&self, t: f64) -> Result<f64> {
        self.deriv.eval(t)
    }

    /// Smallest `chi * f^(m)` over all cell endpoints, using the sign of the
    /// cell interior. Non-negative for every estimate built by [`recover`].
    pub fn cone_margin(&self) -> f64 {
        self.deriv
            .cells()
            .filter(|(a, b, _, _)| b > a)
            .map(|(a, b, va, vb)| {
                let chi = f64::from(self.config.chi_unchecked(0.5 * (a + b)));
                (chi * va).min(chi * vb)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pointwise `f^(m)(s)` implied by `alpha`.
pub fn recover_deriv(problem: &DualProblem, alpha: &[f64], s: f64) -> Result<f64> {
    let w = problem.truncated_w(alpha, s)?;
    Ok(problem.deriv_from_w(w))
}

/// `f^(m)` on the dual quadrature cells.
pub fn deriv_function(problem: &DualProblem, alpha: &[f64]) -> Result<CellFunction> {
    let cells = problem.cell_evals(alpha);
    let mut f = CellFunction::with_capacity(cells.len() + 8);
    for e in &cells {
        let fa = problem.deriv_from_w(e.wa);
        let fb = problem.deriv_from_w(e.wb);
        f.push(e.a, e.b, fa, fb)?;
    }
    Ok(f)
}

/// `∫_0^{t} (t - s)^{m-1} / (m-1)! f^(m)(s) ds`.
fn remainder(m: usize, deriv: &CellFunction, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    deriv.integrate_to(t, |s| taylor_weight(m, t, s))
}

/// Admissible values of `y_i - f(t_i)` given `alpha_i`: a point for interior
/// multipliers, a half-line for Huber multipliers at their box bound.
fn residual_interval(loss: &LossSpec, alpha: f64) -> Result<(f64, f64)> {
    match loss.conj_box() {
        Some((lo, hi)) => {
            let a = alpha.clamp(lo, hi);
            let slope = loss.rho_conj_prime(a)?;
            if a >= hi * (1.0 - 1e-9) {
                Ok((slope, f64::INFINITY))
            } else if a <= lo * (1.0 - 1e-9) {
                Ok((f64::NEG_INFINITY, slope))
            } else {
                Ok((slope, slope))
            }
        }
        None => {
            let slope = loss.rho_conj_prime(alpha)?;
            Ok((slope, slope))
        }
    }
}

/// Taylor coefficients from the data relations: minimizes the summed squared
/// distance of `y_i - f(t_i)` to its admissible interval. The result is the
/// least-squares fit when every multiplier is interior; Huber components at
/// their bound only contribute while violated.
pub fn recover_polynomial(
    problem: &DualProblem,
    alpha: &[f64],
    deriv: &CellFunction,
) -> Result<(Vec<f64>, f64)> {
    let m = problem.params().m();
    let n = problem.len();
    let mut base = Vec::with_capacity(n);
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let ti = problem.t()[i];
        base.push(problem.y()[i] - remainder(m, deriv, ti)?);
        bounds.push(residual_interval(&problem.losses()[i], alpha[i])?);
    }
    let basis = DMatrix::from_fn(n, m, |r, j| poly_basis(j, problem.t()[r]));
    // Signed distance of each residual to its interval.
    let excess = |a: &DVector<f64>| -> DVector<f64> {
        let fit = &basis * a;
        DVector::from_fn(n, |i, _| {
            let r = base[i] - fit[i];
            let (lo, hi) = bounds[i];
            if r < lo {
                r - lo
            } else if r > hi {
                r - hi
            } else {
                0.0
            }
        })
    };
    let phi = |a: &DVector<f64>| excess(a).norm_squared();

    let lsq = |rows: &[usize]| -> Option<DVector<f64>> {
        if rows.len() < m {
            return None;
        }
        let a_mat = DMatrix::from_fn(rows.len(), m, |r, j| basis[(rows[r], j)]);
        let b = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|&r| {
                let (lo, hi) = bounds[r];
                base[r] - if lo.is_finite() { lo } else { hi }
            }),
        );
        let svd = a_mat.svd(true, true);
        let smax = svd.singular_values.amax();
        if svd.rank(1e-12 * smax) < m {
            return None;
        }
        svd.solve(&b, 1e-12 * smax).ok()
    };
    let inner: Vec<usize> = (0..n).filter(|&i| bounds[i].0 == bounds[i].1).collect();
    let all: Vec<usize> = (0..n).collect();
    let mut a = lsq(&inner)
        .or_else(|| lsq(&all))
        .ok_or_else(|| Error::Setup("abscissae do not separate polynomials".into()))?;

    // Semismooth Newton on the piecewise quadratic; exits at once when the
    // least-squares start already satisfies every one-sided relation.
    let scale = base.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut value = phi(&a);
    for _ in 0..100 {
        if value <= (1e-15 * scale).powi(2) {
            break;
        }
        let e = excess(&a);
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut g = DVector::<f64>::zeros(m);
        for i in 0..n {
            if e[i] != 0.0 || bounds[i].0 == bounds[i].1 {
                let row = basis.row(i).transpose();
                h += &row * row.transpose();
                g -= &row * e[i];
            }
        }
        let ridge = 1e-12 * h.trace().max(1e-300);
        for j in 0..m {
            h[(j, j)] += ridge;
        }
        let Some(chol) = h.cholesky() else { break };
        let d = chol.solve(&(-&g));
        let slope = 2.0 * g.dot(&d);
        if !(slope < 0.0) {
            break;
        }
        let mut tau = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = &a + &d * tau;
            let v = phi(&trial);
            if v <= value + 1e-4 * tau * slope {
                a = trial;
                value = v;
                moved = true;
                break;
            }
            tau *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let resid = excess(&a).amax();
    Ok((a.as_slice().to_vec(), resid))
}

/// Full primal estimate from a dual solution.
pub fn recover(problem: &DualProblem, solution: &DualSolution) -> Result<SplineEstimate> {
    let alpha = &solution.alpha;
    let deriv = deriv_function(problem, alpha)?;
    let (a, polynomial_residual) = recover_polynomial(problem, alpha, &deriv)?;
    let params = *problem.params();
    let fitted = problem
        .t()
        .iter()
        .map(|&t| evaluate_from_parts(&params, &a, &deriv, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplineEstimate {
        a,
        deriv,
        fitted,
        polynomial_residual,
        params,
        config: problem.config().clone(),
    })
}

/// Optimality certificates of a recovered estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// `max_i |rho_i'(y_i - f(t_i)) - alpha_i|`.
    pub multiplier: f64,
    /// `max_i dist(y_i - f(t_i), ∂rho_i*(alpha_i))`.
    pub residual: f64,
    /// Continuous primal value `VP[f]` on the dual quadrature.
    pub primal: f64,
    /// Dual objective at `alpha`.
    pub dual: f64,
    /// `primal + dual`, zero at joint optimality.
    pub gap: f64,
    /// `min chi f^(m)` over cell endpoints (non-negative when feasible).
    pub cone_margin: f64,
}

pub fn kkt_report(problem: &DualProblem, alpha: &[f64], est: &SplineEstimate) -> KktReport {
    let mut multiplier: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let mut data = 0.0;
    for i in 0..problem.len() {
        let loss = problem.losses()[i];
        let r = problem.y()[i] - est.fitted[i];
        multiplier = multiplier.max((loss.rho_prime(r) - alpha[i]).abs());
        residual = residual.max(loss.conj_subgradient_gap(alpha[i], r));
        data += loss.rho(r);
    }
    let p = problem.params().p();
    let penalty = problem.lambda() / p * est.deriv.integrate_map(|v| v.abs().powf(p));
    let primal = penalty + data;
    let dual = problem.objective(alpha);
    KktReport {
        multiplier,
        residual,
        primal,
        dual,
        gap: primal + dual,
        cone_margin: est.cone_margin(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::Orientation;
    use crate::dual::DualOptions;
    use crate::problem::{Observations, ProblemSpec};

    fn fit(
        t: &[f64],
        y: &[f64],
        m: usize,
        p: f64,
        lambda: f64,
        cfg: ChangePointConfig,
    ) -> (DualProblem, DualSolution, SplineEstimate) {
        let o = Observations::new(t.to_vec(), y.to_vec(), None).unwrap();
        let spec = ProblemSpec::quadratic(SobolevParams::new(m, p).unwrap(), lambda, &o).unwrap();
        let prob = DualProblem::new(&o, &spec, &cfg, 512).unwrap();
        let sol = prob.solve(&DualOptions::default()).unwrap();
        let est = recover(&prob, &sol).unwrap();
        (prob, sol, est)
    }

    #[test]
    fn deriv_examples() {
        let t = [0.2, 0.9];
        let o = Observations::new(t.to_vec(), vec![0.0; 2], None).unwrap();
        let cfg = ChangePointConfig::single(1, Orientation::Positive).unwrap();
        let spec = ProblemSpec::quadratic(SobolevParams::new(1, 2.0).unwrap(), 0.5, &o).unwrap();
        let prob = DualProblem::new(&o, &spec, &cfg, 16).unwrap();
        // g = 0.5 on s < 0.2, i.e. w = lambda.
        assert!((recover_deriv(&prob, &[0.5, 0.0], 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(recover_deriv(&prob, &[-0.5, 0.0], 0.1).unwrap(), 0.0);

        let spec3 = ProblemSpec::quadratic(SobolevParams::new(1, 3.0).unwrap(), 1.0, &o).unwrap();
        let prob3 = DualProblem::new(&o, &spec3, &cfg, 16).unwrap();
        assert!((recover_deriv(&prob3, &[4.0, 0.0], 0.1).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn line_is_reproduced() {
        let t = [0.0, 0.3, 0.6, 1.0];
        let y: Vec<f64> = t.iter().map(|t| 1.0 + 2.0 * t).collect();
        let cfg = ChangePointConfig::single(2, Orientation::Positive).unwrap();
        let (prob, sol, est) = fit(&t, &y, 2, 2.0, 0.1, cfg);
        assert!(sol.alpha.iter().all(|a| a.abs() < 1e-12));
        assert!((est.a[0] - 1.0).abs() < 1e-12 && (est.a[1] - 2.0).abs() < 1e-12);
        let k = kkt_report(&prob, &sol.alpha, &est);
        assert!(k.gap.abs() < 1e-12);
        assert!((est.evaluate(0.5).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_fit_certificates() {
        let t: Vec<f64> = (0..12).map(|k| (k as f64 + 0.5) / 12.0).collect();
        let y: Vec<f64> = t.iter().map(|&t| (4.0 * t).sin()).collect();
        let cfg = ChangePointConfig::single(1, Orientation::Positive).unwrap();
        let (prob, sol, est) = fit(&t, &y, 1, 2.0, 1e-3, cfg);
        let k = kkt_report(&prob, &sol.alpha, &est);
        assert!(k.multiplier < 1e-7 && k.residual < 1e-6, "{k:?}");
        assert!(k.cone_margin >= 0.0);
        assert!(est.polynomial_residual < 1e-6);
        assert!(k.gap.abs() < 1e-6 * (1.0 + k.primal.abs()), "{k:?}");
        // The decreasing tail is flattened.
        assert!(est.fitted.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn truncation_zeroes_and_continuity() {
        let t: Vec<f64> = (0..16).map(|k| (k as f64 + 0.5) / 16.0).collect();
        let y: Vec<f64> = t.iter().map(|&t| (6.0 * t).sin()).collect();
        let cfg = ChangePointConfig::new(2, vec![0.5], Orientation::Positive).unwrap();
        let (prob, sol, est) = fit(&t, &y, 2, 2.0, 1e-4, cfg);
        for (a, b, va, vb) in est.deriv.cells() {
            let chi = f64::from(prob.config().chi((0.5 * (a + b)).min(1.0)).unwrap());
            if chi * prob.g_alpha(&sol.alpha, a) < 0.0 {
                assert_eq!(va, 0.0);
            }
            if chi * prob.g_alpha(&sol.alpha, b) < 0.0 && b < 1.0 {
                assert_eq!(vb, 0.0);
            }
            assert!(chi * va >= 0.0 && chi * vb >= 0.0);
        }
    }

    #[test]
    fn huber_multipliers_all_at_bound() {
        // Alternating data far beyond the cutoff: every multiplier sits on
        // its box and the constant is pinned only by one-sided relations.
        let t: Vec<f64> = (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect();
        let y: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let o = Observations::new(t.clone(), y, None).unwrap();
        let spec = ProblemSpec::huber(SobolevParams::new(1, 2.0).unwrap(), 1e-2, 0.05, &o).unwrap();
        let cfg = ChangePointConfig::single(1, Orientation::Positive).unwrap();
        let prob = DualProblem::new(&o, &spec, &cfg, 512).unwrap();
        let sol = prob.solve(&DualOptions::default()).unwrap();
        let est = recover(&prob, &sol).unwrap();
        let k = kkt_report(&prob, &sol.alpha, &est);
        assert!(k.multiplier < 1e-9 && k.residual < 1e-9, "{k:?}");
        assert!(k.gap.abs() < 1e-9, "{k:?}");
    }
}
