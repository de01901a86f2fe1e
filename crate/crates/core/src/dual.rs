//! Finite-dimensional dual of the constrained smoothing problem for `ell = m`.
//!
//! For multipliers `alpha` (one per observation) the dual functional is
//!
//! ```text
//! VP*(alpha) = lambda^{1-q} / q ∫ |w(s)|^q ds + sum_i [rho_i*(alpha_i) - alpha_i y_i]
//! ```
//!
//! where `g(s) = sum_i alpha_i (t_i - s)_+^{m-1} / (m-1)!` and the truncation
//! `w` keeps `g` where `chi(s) g(s) >= 0` and is zero elsewhere. Multipliers
//! are restricted to the moment subspace `sum_i alpha_i t_i^j = 0`, `j < m`,
//! and to the conjugate boxes of Huber losses.
//!
//! Integrals use the trapezoid rule on a uniform grid augmented with every
//! `t_i` and change point. Truncation acts on node values, which keeps the
//! discrete objective continuously differentiable in `alpha` with the
//! gradient below as its exact derivative.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cone::ChangePointConfig;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::problem::{Observations, ProblemSpec};
use crate::quadrature::QuadratureGrid;
use crate::rkhs::{representer_deriv, taylor_weight, SobolevParams};

pub const DEFAULT_GRID_CELLS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub max_iter: usize,
    /// Tolerance on the sup-norm of the projected gradient.
    pub grad_tol: f64,
    /// Tolerance on `max_j |sum_i alpha_i t_i^j|`.
    pub feas_tol: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            feas_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub moment_residual: f64,
    pub iterations: usize,
}

/// Per-cell quantities of `w` needed by the trapezoid rule.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellEval {
    pub a: f64,
    pub b: f64,
    pub wa: f64,
    pub wb: f64,
    /// Whether `chi * g >= 0` at each end (one-sided limits inside the cell).
    pub kept_a: bool,
    pub kept_b: bool,
    /// Trapezoid weight of each endpoint value.
    pub half: f64,
}

/// A dual problem on a fixed quadrature grid.
#[derive(Debug, Clone)]
pub struct DualProblem {
    t: Vec<f64>,
    y: Vec<f64>,
    losses: Vec<LossSpec>,
    params: SobolevParams,
    lambda: f64,
    config: ChangePointConfig,
    grid: QuadratureGrid,
    /// Sign of the constraint on each cell.
    cell_chi: Vec<f64>,
    /// First observation whose abscissa is at or beyond the cell's right end.
    cell_first: Vec<usize>,
    /// `kernel[node * n + i]`: representer derivative at a node for `t_i >= node`.
    kernel: Vec<f64>,
    /// Moment matrix, `m x n`, entries `t_i^j`.
    moments: DMatrix<f64>,
    /// Orthonormal basis of the moment null space, `n x (n - m)`.
    null_basis: DMatrix<f64>,
}

impl DualProblem {
    pub fn new(
        obs: &Observations,
        spec: &ProblemSpec,
        config: &ChangePointConfig,
        grid_cells: usize,
    ) -> Result<Self> {
        spec.check_against(obs)?;
        let params = spec.params;
        let m = params.m();
        if config.ell() != m {
            return Err(Error::Unsupported(format!(
                "the finite-dimensional dual requires ell = m (ell = {}, m = {m})",
                config.ell()
            )));
        }
        let n = obs.len();
        if n < m.max(2) {
            return Err(Error::Setup(format!(
                "{n} observations cannot separate polynomials of degree {} (need at least {})",
                m - 1,
                m.max(2)
            )));
        }
        let t = obs.t().to_vec();
        let mut extra: Vec<f64> = config.points().to_vec();
        extra.extend_from_slice(&t);
        let grid = QuadratureGrid::augmented(grid_cells, &extra)?;

        let nodes = grid.nodes();
        let mut kernel = vec![0.0; nodes.len() * n];
        for (k, &s) in nodes.iter().enumerate() {
            for (i, &ti) in t.iter().enumerate() {
                if ti >= s {
                    kernel[k * n + i] = taylor_weight(m, ti, s);
                }
            }
        }
        let mut cell_chi = Vec::with_capacity(nodes.len() - 1);
        let mut cell_first = Vec::with_capacity(nodes.len() - 1);
        for (a, b) in grid.cells() {
            cell_chi.push(f64::from(config.chi_unchecked(0.5 * (a + b))));
            cell_first.push(t.partition_point(|&ti| ti < b));
        }

        let moments = DMatrix::from_fn(m, n, |j, i| t[i].powi(j as i32));
        let null_basis = null_space(&moments)?;
        if null_basis.ncols() != n - m {
            return Err(Error::Setup(format!(
                "moment matrix has rank {} < {m}; abscissae do not separate polynomials",
                n - null_basis.ncols()
            )));
        }

        Ok(Self {
            t,
            y: obs.y().to_vec(),
            losses: spec.losses.clone(),
            params,
            lambda: spec.lambda,
            config: config.clone(),
            grid,
            cell_chi,
            cell_first,
            kernel,
            moments,
            null_basis,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn params(&self) -> &SobolevParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn config(&self) -> &ChangePointConfig {
        &self.config
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn losses(&self) -> &[LossSpec] {
        &self.losses
    }

    /// `max_j |sum_i alpha_i t_i^j|`.
    pub fn moment_residual(&self, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        (&self.moments * a).amax()
    }

    /// `m`-th derivative of the representer combination at `s`.
    pub fn g_alpha(&self, alpha: &[f64], s: f64) -> f64 {
        self.t
            .iter()
            .zip(alpha)
            .map(|(&ti, &ai)| ai * representer_deriv(&self.params, ti, s))
            .sum()
    }

    /// `g_alpha(s)` where it agrees in sign with `chi(s)`, zero elsewhere.
    pub fn truncated_w(&self, alpha: &[f64], s: f64) -> Result<f64> {
        let chi = f64::from(self.config.chi(s)?);
        let g = self.g_alpha(alpha, s);
        Ok(if chi != 0.0 && chi * g >= 0.0 { g } else { 0.0 })
    }

    fn in_box(&self, alpha: &[f64]) -> bool {
        self.losses
            .iter()
            .zip(alpha)
            .all(|(l, &a)| match l.conj_box() {
                Some((lo, hi)) => a >= lo && a <= hi,
                None => true,
            })
    }

    pub(crate) fn cell_evals(&self, alpha: &[f64]) -> Vec<CellEval> {
        let n = self.t.len();
        let nodes = self.grid.nodes();
        let mut out = Vec::with_capacity(nodes.len() - 1);
        for (c, w) in nodes.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let first = self.cell_first[c];
            let chi = self.cell_chi[c];
            let ka = &self.kernel[c * n..(c + 1) * n];
            let kb = &self.kernel[(c + 1) * n..(c + 2) * n];
            let mut ga = 0.0;
            let mut gb = 0.0;
            for i in first..n {
                ga += alpha[i] * ka[i];
                gb += alpha[i] * kb[i];
            }
            let kept_a = chi != 0.0 && chi * ga >= 0.0;
            let kept_b = chi != 0.0 && chi * gb >= 0.0;
            out.push(CellEval {
                a,
                b,
                wa: if kept_a { ga } else { 0.0 },
                wb: if kept_b { gb } else { 0.0 },
                kept_a,
                kept_b,
                half: 0.5 * (b - a),
            });
        }
        out
    }

    fn smooth_term(&self, cells: &[CellEval]) -> f64 {
        let q = self.params.q();
        let s: f64 = cells
            .iter()
            .map(|e| e.half * (e.wa.abs().powf(q) + e.wb.abs().powf(q)))
            .sum();
        self.lambda.powf(1.0 - q) / q * s
    }

    /// Dual objective; `+inf` outside the Huber boxes.
    pub fn objective(&self, alpha: &[f64]) -> f64 {
        assert_eq!(alpha.len(), self.t.len(), "alpha has wrong length");
        if !self.in_box(alpha) {
            return f64::INFINITY;
        }
        let cells = self.cell_evals(alpha);
        let data: f64 = self
            .losses
            .iter()
            .zip(alpha)
            .zip(&self.y)
            .map(|((l, &a), &y)| l.rho_conj(a) - a * y)
            .sum();
        self.smooth_term(&cells) + data
    }

    /// `lambda^{1-q} sign(w) |w|^{q-1}`, the recovered `f^(m)` for a value of `w`.
    #[inline]
    pub(crate) fn deriv_from_w(&self, w: f64) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        let q = self.params.q();
        w.signum() * (w.abs() / self.lambda).powf(q - 1.0)
    }

    /// Analytic gradient of [`DualProblem::objective`]. Outside the Huber
    /// boxes the conjugate part uses the interior formula.
    pub fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let cells = self.cell_evals(alpha);
        self.gradient_from_cells(alpha, &cells)
    }

    fn gradient_from_cells(&self, alpha: &[f64], cells: &[CellEval]) -> Vec<f64> {
        let n = self.t.len();
        let mut grad: Vec<f64> = self
            .losses
            .iter()
            .zip(alpha)
            .zip(&self.y)
            .map(|((l, &a), &y)| a * l.rho_conj_second() - y)
            .collect();
        for (c, e) in cells.iter().enumerate() {
            let fa = e.half * self.deriv_from_w(e.wa);
            let fb = e.half * self.deriv_from_w(e.wb);
            if fa == 0.0 && fb == 0.0 {
                continue;
            }
            let ka = &self.kernel[c * n..(c + 1) * n];
            let kb = &self.kernel[(c + 1) * n..(c + 2) * n];
            for i in self.cell_first[c]..n {
                grad[i] += fa * ka[i] + fb * kb[i];
            }
        }
        grad
    }

    /// Positive semidefinite model of the Hessian used by Newton steps.
    fn hessian(&self, cells: &[CellEval]) -> DMatrix<f64> {
        let n = self.t.len();
        let q = self.params.q();
        let scale = (q - 1.0) * self.lambda.powf(1.0 - q);
        let wmax = cells
            .iter()
            .map(|e| e.wa.abs().max(e.wb.abs()))
            .fold(0.0, f64::max);
        let floor = (1e-10 * wmax).max(1e-200);
        let curvature = |w: f64| -> f64 {
            if q == 2.0 {
                1.0
            } else if q > 2.0 {
                w.abs().powf(q - 2.0)
            } else {
                w.abs().max(floor).powf(q - 2.0)
            }
        };
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut add = |weight: f64, node: usize, first: usize| {
            if weight == 0.0 {
                return;
            }
            let k = &self.kernel[node * n..(node + 1) * n];
            for i in first..n {
                let wi = weight * k[i];
                if wi == 0.0 {
                    continue;
                }
                for j in first..=i {
                    h[(i, j)] += wi * k[j];
                }
            }
        };
        for (c, e) in cells.iter().enumerate() {
            let first = self.cell_first[c];
            if e.kept_a {
                add(scale * e.half * curvature(e.wa), c, first);
            }
            if e.kept_b {
                add(scale * e.half * curvature(e.wb), c + 1, first);
            }
        }
        for i in 0..n {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
            h[(i, i)] += self.losses[i].rho_conj_second();
        }
        h
    }

    /// Euclidean projection onto `{T alpha = 0} ∩ boxes`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let boxes: Vec<Option<(f64, f64)>> = self.losses.iter().map(|l| l.conj_box()).collect();
        let vv = DVector::from_column_slice(v);
        if boxes.iter().all(Option::is_none) {
            let z = &self.null_basis;
            return (z * (z.transpose() * vv)).as_slice().to_vec();
        }
        let m = self.params.m();
        let n = v.len();
        let tt = &self.moments;
        let clamp = |mu: &DVector<f64>| -> (Vec<f64>, Vec<bool>) {
            let shift = tt.transpose() * mu;
            let mut out = Vec::with_capacity(n);
            let mut free = Vec::with_capacity(n);
            for i in 0..n {
                let x = v[i] - shift[i];
                match boxes[i] {
                    Some((lo, _)) if x <= lo => {
                        out.push(lo);
                        free.push(false);
                    }
                    Some((_, hi)) if x >= hi => {
                        out.push(hi);
                        free.push(false);
                    }
                    _ => {
                        out.push(x);
                        free.push(true);
                    }
                }
            }
            (out, free)
        };
        // Concave dual in mu; ascend with safeguarded semismooth Newton.
        let dual_value = |mu: &DVector<f64>| -> f64 {
            let (a, _) = clamp(mu);
            let av = DVector::from_column_slice(&a);
            0.5 * (&av - &vv).norm_squared() + mu.dot(&(tt * &av))
        };
        let mut mu = DVector::<f64>::zeros(m);
        let scale = 1.0 + vv.amax();
        for _ in 0..200 {
            let (a, free) = clamp(&mu);
            let grad = tt * DVector::from_column_slice(&a);
            if grad.amax() <= 1e-15 * scale {
                return a;
            }
            let mut jac = DMatrix::<f64>::zeros(m, m);
            for i in (0..n).filter(|&i| free[i]) {
                for r in 0..m {
                    for c in 0..m {
                        jac[(r, c)] += tt[(r, i)] * tt[(c, i)];
                    }
                }
            }
            let ridge = 1e-12 * (1.0 + jac.trace());
            for r in 0..m {
                jac[(r, r)] += ridge;
            }
            let step = match jac.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone(),
            };
            let base = dual_value(&mu);
            let mut tau = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial = &mu + &step * tau;
                if dual_value(&trial) >= base + 1e-4 * tau * grad.dot(&step) {
                    mu = trial;
                    moved = true;
                    break;
                }
                tau *= 0.5;
            }
            if !moved {
                break;
            }
        }
        // Fall back to alternating projections from the best multiplier.
        let (mut a, _) = clamp(&mu);
        for _ in 0..10_000 {
            let av = DVector::from_column_slice(&a);
            let z = &self.null_basis;
            let onto = z * (z.transpose() * &av);
            a = onto.as_slice().to_vec();
            for (ai, bx) in a.iter_mut().zip(&boxes) {
                if let Some((lo, hi)) = bx {
                    *ai = ai.clamp(*lo, *hi);
                }
            }
            if self.moment_residual(&a) <= 1e-14 * scale {
                break;
            }
        }
        a
    }

    /// Sup-norm of `P(alpha - grad) - alpha`.
    pub fn projected_gradient_norm(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let v: Vec<f64> = alpha.iter().zip(grad).map(|(a, g)| a - g).collect();
        let p = self.project(&v);
        p.iter()
            .zip(alpha)
            .map(|(x, a)| (x - a).abs())
            .fold(0.0, f64::max)
    }

    /// Minimizes the dual from `alpha = 0`.
    pub fn solve(&self, opts: &DualOptions) -> Result<DualSolution> {
        self.solve_from(None, opts)
    }

    /// Minimizes the dual from a given starting point (projected first).
    pub fn solve_from(&self, init: Option<&[f64]>, opts: &DualOptions) -> Result<DualSolution> {
        let n = self.t.len();
        let start = match init {
            Some(a) => {
                if a.len() != n {
                    return Err(Error::Invalid(format!(
                        "initial multipliers have length {}, expected {n}",
                        a.len()
                    )));
                }
                self.project(a)
            }
            None if self.params.q() < 2.0 => {
                // |w|^q has unbounded curvature at w = 0 when q < 2; start
                // from the quadratic-penalty solution instead of zero.
                let warm = self.with_exponent(2.0)?;
                match warm.minimize(vec![0.0; n], opts) {
                    Ok(s) => s.alpha,
                    Err(Error::DualNotConverged { best, .. }) => best.alpha,
                    Err(e) => return Err(e),
                }
            }
            None => vec![0.0; n],
        };
        self.minimize(start, opts)
    }

    /// Copy of the problem with a different penalty exponent.
    fn with_exponent(&self, p: f64) -> Result<Self> {
        let mut other = self.clone();
        other.params = SobolevParams::new(self.params.m(), p)?;
        Ok(other)
    }

    fn minimize(&self, mut alpha: Vec<f64>, opts: &DualOptions) -> Result<DualSolution> {
        let n = self.t.len();
        let boxes: Vec<Option<(f64, f64)>> = self.losses.iter().map(|l| l.conj_box()).collect();
        let mut cells = self.cell_evals(&alpha);
        let mut value = self.objective(&alpha);
        let mut grad = self.gradient_from_cells(&alpha, &cells);
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut pg = self.projected_gradient_norm(&alpha, &grad);
        let mut iterations = 0;

        while pg > opts.grad_tol && iterations < opts.max_iter {
            iterations += 1;
            let old_alpha = alpha.clone();
            let old_grad = grad.clone();

            let stepped = self
                .newton_step(&alpha, &grad, value, pg, &cells, &boxes)
                .or_else(|| self.spg_step(&alpha, &grad, value, prev.as_ref()));
            let Some((next, next_value)) = stepped else {
                break;
            };
            alpha = next;
            value = next_value;
            cells = self.cell_evals(&alpha);
            grad = self.gradient_from_cells(&alpha, &cells);
            pg = self.projected_gradient_norm(&alpha, &grad);
            prev = Some((
                alpha.iter().zip(&old_alpha).map(|(a, b)| a - b).collect(),
                grad.iter().zip(&old_grad).map(|(a, b)| a - b).collect(),
            ));
        }

        if self.moment_residual(&alpha) > opts.feas_tol {
            alpha = self.project(&alpha);
            value = self.objective(&alpha);
            grad = self.gradient(&alpha);
            pg = self.projected_gradient_norm(&alpha, &grad);
        }
        let solution = DualSolution {
            moment_residual: self.moment_residual(&alpha),
            alpha,
            objective: value,
            projected_gradient_norm: pg,
            iterations,
        };
        debug_assert_eq!(solution.alpha.len(), n);
        if pg > opts.grad_tol {
            return Err(Error::DualNotConverged {
                iterations,
                projected_gradient: pg,
                best: Box::new(solution),
            });
        }
        Ok(solution)
    }

    /// Working-set Newton step in the null space of the moment constraints
    /// and the Huber components held at their bounds.
    fn newton_step(
        &self,
        alpha: &[f64],
        grad: &[f64],
        value: f64,
        pg: f64,
        cells: &[CellEval],
        boxes: &[Option<(f64, f64)>],
    ) -> Option<(Vec<f64>, f64)> {
        let n = alpha.len();
        let m = self.params.m();
        // +1 at the upper bound, -1 at the lower bound.
        let side: Vec<f64> = (0..n)
            .map(|i| match boxes[i] {
                Some((lo, hi)) => {
                    let eps = 1e-12 * hi.abs();
                    if alpha[i] >= hi - eps {
                        1.0
                    } else if alpha[i] <= lo + eps {
                        -1.0
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            })
            .collect();
        let mut fixed: Vec<bool> = side.iter().map(|s| *s != 0.0).collect();
        if fixed.iter().any(|&f| f) {
            // Bound multipliers from moment multipliers fitted on the free set;
            // release components whose multiplier has the wrong sign.
            let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
            let nu = if free.len() >= m {
                let tf = DMatrix::from_fn(free.len(), m, |r, j| self.moments[(j, free[r])]);
                let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
                tf.svd(true, true).solve(&gf, 1e-12).ok()
            } else {
                None
            };
            let nu = nu.unwrap_or_else(|| DVector::zeros(m));
            let shift = self.moments.transpose() * &nu;
            for i in 0..n {
                if fixed[i] && side[i] * (grad[i] - shift[i]) >= 0.0 {
                    fixed[i] = false;
                }
            }
        }
        let h = self.hessian(cells);
        let g = DVector::from_column_slice(grad);
        let mut d;
        loop {
            let count = fixed.iter().filter(|&&f| f).count();
            let basis = if count == 0 {
                self.null_basis.clone()
            } else {
                let mut c = DMatrix::<f64>::zeros(m + count, n);
                c.rows_mut(0, m).copy_from(&self.moments);
                for (r, i) in (0..n).filter(|&i| fixed[i]).enumerate() {
                    c[(m + r, i)] = 1.0;
                }
                null_space(&c).ok()?
            };
            if basis.ncols() == 0 {
                return None;
            }
            let mut hr = basis.transpose() * &h * &basis;
            let ridge = 1e-13 * (1.0 + hr.diagonal().amax());
            for k in 0..hr.nrows() {
                hr[(k, k)] += ridge;
            }
            let rg = basis.transpose() * &g;
            d = &basis * hr.cholesky()?.solve(&(-rg));
            // A released component that would leave its box is held instead.
            let mut changed = false;
            for i in 0..n {
                if !fixed[i] && side[i] * d[i] > 0.0 {
                    fixed[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let slope = g.dot(&d);
        if !(slope < 0.0) {
            return None;
        }
        // Longest step keeping the moving Huber components inside their boxes.
        let mut tau_max = f64::INFINITY;
        let mut blocking = None;
        for i in 0..n {
            let (Some((lo, hi)), di) = (boxes[i], d[i]) else {
                continue;
            };
            if fixed[i] || di == 0.0 {
                continue;
            }
            let (room, bound) = if di > 0.0 {
                ((hi - alpha[i]) / di, hi)
            } else {
                ((lo - alpha[i]) / di, lo)
            };
            if room.max(0.0) < tau_max {
                tau_max = room.max(0.0);
                blocking = Some((i, bound));
            }
        }
        let tau0: f64 = 1.0f64.min(tau_max);
        if tau0 <= 0.0 {
            return None;
        }
        let make_trial = |tau: f64| -> Vec<f64> {
            let mut trial: Vec<f64> = alpha
                .iter()
                .zip(d.iter())
                .map(|(a, di)| a + tau * di)
                .collect();
            if tau == tau_max {
                if let Some((i, bound)) = blocking {
                    trial[i] = bound;
                }
            }
            for (i, (x, bx)) in trial.iter_mut().zip(boxes).enumerate() {
                if fixed[i] {
                    *x = alpha[i];
                } else if let Some((lo, hi)) = bx {
                    *x = x.clamp(*lo, *hi);
                }
            }
            trial
        };
        // Once the predicted decrease is below the rounding level of the
        // objective, the line search is blind; accept the full step if it
        // reduces the projected gradient instead.
        let magnitude: f64 = value.abs()
            + alpha
                .iter()
                .zip(&self.y)
                .map(|(a, y)| (a * y).abs())
                .sum::<f64>();
        if -slope < 1e-13 * magnitude {
            let trial = make_trial(tau0);
            let v = self.objective(&trial);
            let pg_trial = self.projected_gradient_norm(&trial, &self.gradient(&trial));
            return (v.is_finite() && pg_trial < pg).then_some((trial, v));
        }
        let mut tau = tau0;
        for _ in 0..50 {
            let trial = make_trial(tau);
            let v = self.objective(&trial);
            if v <= value + 1e-4 * tau * slope {
                return Some((trial, v));
            }
            tau *= 0.5;
        }
        None
    }

    /// Spectral projected gradient step with Barzilai-Borwein scaling.
    fn spg_step(
        &self,
        alpha: &[f64],
        grad: &[f64],
        value: f64,
        prev: Option<&(Vec<f64>, Vec<f64>)>,
    ) -> Option<(Vec<f64>, f64)> {
        let sigma = prev
            .map(|(s, y)| {
                let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|a| a * a).sum();
                if sy > 0.0 {
                    ss / sy
                } else {
                    1.0
                }
            })
            .unwrap_or(1.0)
            .clamp(1e-12, 1e12);
        let v: Vec<f64> = alpha.iter().zip(grad).map(|(a, g)| a - sigma * g).collect();
        let p = self.project(&v);
        let d: Vec<f64> = p.iter().zip(alpha).map(|(x, a)| x - a).collect();
        let slope: f64 = d.iter().zip(grad).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            return None;
        }
        let mut tau = 1.0;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(&d).map(|(a, di)| a + tau * di).collect();
            let v = self.objective(&trial);
            if v <= value + 1e-4 * tau * slope {
                return Some((trial, v));
            }
            tau *= 0.5;
        }
        None
    }
}

/// Orthonormal basis of the null space of `c` (rows are constraints).
fn null_space(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.ncols();
    let gram = c.transpose() * c;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    let tol = 1e-10 * top.max(1e-300);
    let idx: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    let mut z = DMatrix::<f64>::zeros(n, idx.len());
    for (col, &k) in idx.iter().enumerate() {
        z.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok(z)
}

/// Builds and solves the dual for one configuration.
pub fn solve_dual(
    obs: &Observations,
    spec: &ProblemSpec,
    config: &ChangePointConfig,
    grid_cells: usize,
    opts: &DualOptions,
) -> Result<(DualProblem, DualSolution)> {
    let problem = DualProblem::new(obs, spec, config, grid_cells)?;
    let solution = problem.solve(opts)?;
    Ok((problem, solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::Orientation;

    fn obs(t: &[f64], y: &[f64]) -> Observations {
        Observations::new(t.to_vec(), y.to_vec(), None).unwrap()
    }

    fn problem(
        t: &[f64],
        y: &[f64],
        m: usize,
        p: f64,
        lambda: f64,
        cfg: ChangePointConfig,
    ) -> DualProblem {
        let o = obs(t, y);
        let losses = vec![LossSpec::quadratic(1.0).unwrap(); t.len()];
        let spec = ProblemSpec::new(SobolevParams::new(m, p).unwrap(), lambda, losses).unwrap();
        DualProblem::new(&o, &spec, &cfg, 256).unwrap()
    }

    fn up(ell: usize) -> ChangePointConfig {
        ChangePointConfig::single(ell, Orientation::Positive).unwrap()
    }

    #[test]
    fn g_alpha_examples() {
        let p = problem(&[0.6, 0.9], &[0.0, 0.0], 1, 2.0, 1.0, up(1));
        assert_eq!(p.g_alpha(&[0.0, 0.0], 0.3), 0.0);
        assert_eq!(p.g_alpha(&[2.0, 0.0], 0.3), 2.0);
        let p = problem(&[0.4, 0.8], &[0.0, 0.0], 2, 2.0, 1.0, up(2));
        assert!((p.g_alpha(&[1.0, -1.0], 0.2) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        let p = problem(&[0.4, 0.8], &[0.0, 0.0], 2, 2.0, 1.0, up(2));
        assert_eq!(p.truncated_w(&[1.0, -1.0], 0.2).unwrap(), 0.0);
        assert!((p.truncated_w(&[-1.0, 1.0], 0.2).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(p.truncated_w(&[0.0, 0.0], 0.2).unwrap(), 0.0);
        assert!(p.truncated_w(&[0.0, 0.0], 1.2).is_err());
    }

    #[test]
    fn rejects_ell_below_m_and_tiny_designs() {
        let o = obs(&[0.2, 0.5, 0.9], &[0.0; 3]);
        let spec = ProblemSpec::quadratic(SobolevParams::new(2, 2.0).unwrap(), 1.0, &o).unwrap();
        assert!(matches!(
            DualProblem::new(&o, &spec, &up(1), 64),
            Err(Error::Unsupported(_))
        ));
        let o1 = obs(&[0.5], &[1.0]);
        let spec1 = ProblemSpec::quadratic(SobolevParams::new(1, 2.0).unwrap(), 1.0, &o1).unwrap();
        assert!(matches!(
            DualProblem::new(&o1, &spec1, &up(1), 64),
            Err(Error::Setup(_))
        ));
    }

    #[test]
    fn objective_and_gradient_at_zero() {
        let p = problem(&[0.1, 0.5, 0.9], &[1.0, -2.0, 0.5], 1, 2.0, 0.3, up(1));
        assert_eq!(p.objective(&[0.0; 3]), 0.0);
        assert_eq!(p.gradient(&[0.0; 3]), vec![-1.0, 2.0, -0.5]);
    }

    #[test]
    fn two_points_force_zero_multipliers() {
        let p = problem(&[0.0, 1.0], &[1.0, 3.0], 2, 2.0, 0.1, up(2));
        let s = p.solve(&DualOptions::default()).unwrap();
        assert!(s.alpha.iter().all(|a| a.abs() < 1e-14));
        assert!(s.objective.abs() < 1e-14);
    }

    #[test]
    fn huber_box_gives_infinite_objective() {
        let o = obs(&[0.1, 0.5, 0.9], &[0.0; 3]);
        let spec = ProblemSpec::huber(SobolevParams::new(1, 2.0).unwrap(), 0.1, 1.0, &o).unwrap();
        let p = DualProblem::new(&o, &spec, &up(1), 64).unwrap();
        assert!(p.objective(&[1.0, -1.0, 0.0]).is_infinite());
        assert!(p.objective(&[0.1, -0.1, 0.0]).is_finite());
    }

    #[test]
    fn projection_respects_moments_and_boxes() {
        let t: Vec<f64> = (0..8).map(|k| (k as f64 + 0.5) / 8.0).collect();
        let o = obs(&t, &[0.0; 8]);
        let spec = ProblemSpec::huber(SobolevParams::new(2, 2.0).unwrap(), 0.1, 0.5, &o).unwrap();
        let p = DualProblem::new(&o, &spec, &up(2), 64).unwrap();
        let v = [3.0, -1.0, 0.2, 0.7, -0.4, 0.0, 0.9, -2.0];
        let a = p.project(&v);
        assert!(p.moment_residual(&a) < 1e-13);
        let bound = 0.5 / 8.0;
        assert!(a.iter().all(|x| x.abs() <= bound + 1e-15));
        // Idempotent.
        let b = p.project(&a);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-13));
    }

    #[test]
    fn finite_difference_gradient() {
        let t = [0.1, 0.3, 0.45, 0.7, 0.95];
        let y = [0.3, -0.2, 0.5, 0.1, 0.8];
        for (m, p) in [(1, 2.0), (2, 1.5), (2, 3.0), (3, 2.0)] {
            let cfg = ChangePointConfig::new(m, vec![0.5], Orientation::Positive).unwrap();
            let prob = problem(&t, &y, m, p, 0.05, cfg);
            let alpha = [0.3, -0.7, 0.2, 0.5, -0.4];
            let g = prob.gradient(&alpha);
            let step = 1e-6;
            let scale = g.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for i in 0..t.len() {
                let mut ap = alpha;
                let mut am = alpha;
                ap[i] += step;
                am[i] -= step;
                let fd = (prob.objective(&ap) - prob.objective(&am)) / (2.0 * step);
                assert!(
                    (fd - g[i]).abs() <= 1e-5 * scale,
                    "m={m} p={p} i={i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }
}
