//! Discretized primal solver, used as an independent check of the dual and
//! as the only solver for `ell < m`.
//!
//! The unknown is `f` on a uniform grid with `M` cells. The objective is
//!
//! ```text
//! (lambda / p) h sum_l |(D^m f)_l|^p + sum_i rho_i(f(t_i) - y_i)
//! ```
//!
//! with `D^m` the forward `m`-th difference divided by `h^m`, and the cone
//! constraint `chi_l (D^ell f)_l >= 0` enforced by a quadratic hinge penalty
//! whose weight grows tenfold until the violation is below tolerance.
//!
//! Node values make the penalty Hessian hopelessly ill-conditioned, so each
//! stage is minimized by damped Newton in the coordinates
//! `z = (Delta^j f_0 / h^j for j < m, D^m f)`, in which the penalty is
//! separable and `f` depends on `z` through cumulative sums.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cone::ChangePointConfig;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::problem::{Observations, ProblemSpec};
use crate::rkhs::SobolevParams;

const P_RANGE: (f64, f64) = (1.2, 4.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Largest admissible `max(0, -chi D^ell f)`.
    pub feas_tol: f64,
    /// Newton iterations per penalty stage.
    pub max_newton: usize,
    /// Newton iterations over all stages.
    pub max_total: usize,
    pub mu_start: f64,
    pub mu_max: f64,
    /// Accept `p` outside `[1.2, 4]`.
    pub allow_any_p: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            max_newton: 200,
            max_total: 5000,
            mu_start: 1.0,
            mu_max: 1e18,
            allow_any_p: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    /// Grid nodes `k / M`.
    pub grid: Vec<f64>,
    /// `f` at the nodes.
    pub f: Vec<f64>,
    /// `D^m f`, one value per stencil.
    pub deriv: Vec<f64>,
    /// Primal objective without the penalty term.
    pub objective: f64,
    /// `max(0, -chi D^ell f)` over all constraint rows.
    pub violation: f64,
    pub mu: f64,
    pub newton_iterations: usize,
    pub converged: bool,
}

impl OracleSolution {
    /// `f` at a grid node given by its abscissa.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let m = (self.grid.len() - 1) as f64;
        let k = (t * m).round();
        ((t * m - k).abs() < 1e-9).then(|| self.f[k as usize])
    }
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc
}

/// Smallest `M >= min_cells` for which every point is a node `k / M`.
pub fn auto_cells(points: &[f64], min_cells: usize) -> Result<usize> {
    let on_grid = |m: usize| {
        points.iter().all(|&t| {
            let x = t * m as f64;
            (x - x.round()).abs() < 1e-9
        })
    };
    (min_cells.max(1)..=1 << 22)
        .find(|&m| on_grid(m))
        .ok_or_else(|| {
            Error::Setup("no uniform grid contains all abscissae and change points".into())
        })
}

/// The discretized primal problem on a uniform grid.
#[derive(Debug, Clone)]
pub struct DiscretePrimal {
    cells: usize,
    h: f64,
    params: SobolevParams,
    lambda: f64,
    losses: Vec<LossSpec>,
    y: Vec<f64>,
    node: Vec<usize>,
}

impl DiscretePrimal {
    pub fn new(obs: &Observations, spec: &ProblemSpec, cells: usize) -> Result<Self> {
        spec.check_against(obs)?;
        let m = spec.params.m();
        if cells < 2 * m + 1 {
            return Err(Error::Invalid(format!(
                "oracle grid needs more than {} cells",
                2 * m
            )));
        }
        let node = obs
            .t()
            .iter()
            .map(|&t| node_index(t, cells))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            h: 1.0 / cells as f64,
            params: spec.params,
            lambda: spec.lambda,
            losses: spec.losses.clone(),
            y: obs.y().to_vec(),
            node,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.cells).map(|k| k as f64 * self.h).collect()
    }

    fn n_u(&self) -> usize {
        self.cells - self.params.m() + 1
    }

    /// `(D^r f)_j` for all stencils `j`.
    fn differences(&self, f: &[f64], r: usize) -> Vec<f64> {
        let mut d = f.to_vec();
        for _ in 0..r {
            d = d.windows(2).map(|w| (w[1] - w[0]) / self.h).collect();
        }
        d
    }

    /// Unconstrained primal objective at node values `f`.
    pub fn objective(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.cells + 1, "f has wrong length");
        let p = self.params.p();
        let penalty: f64 = self
            .differences(f, self.params.m())
            .iter()
            .map(|u| u.abs().powf(p))
            .sum();
        let data: f64 = self
            .node
            .iter()
            .zip(&self.losses)
            .zip(&self.y)
            .map(|((&k, l), &y)| l.rho(f[k] - y))
            .sum();
        self.lambda / p * self.h * penalty + data
    }

    /// `f` from `z = (c, u)`.
    fn expand(&self, z: &[f64]) -> Vec<f64> {
        let m = self.params.m();
        let h = self.h;
        let mut level: Vec<f64> = z[m..].iter().map(|u| u * h.powi(m as i32)).collect();
        for j in (0..m).rev() {
            let mut next = Vec::with_capacity(level.len() + 1);
            let mut acc = z[j] * h.powi(j as i32);
            next.push(acc);
            for d in &level {
                acc += d;
                next.push(acc);
            }
            level = next;
        }
        level
    }

    /// `z` from node values.
    fn compress(&self, f: &[f64]) -> Vec<f64> {
        let m = self.params.m();
        let mut z = Vec::with_capacity(m + self.n_u());
        for j in 0..m {
            z.push(self.differences(f, j)[0]);
        }
        z.extend(self.differences(f, m));
        z
    }

    /// Row `i` of the map from `z` to `f(t_i)`.
    fn data_rows(&self) -> DMatrix<f64> {
        let m = self.params.m();
        let n_u = self.n_u();
        let mut g = DMatrix::<f64>::zeros(self.node.len(), m + n_u);
        for (i, &k) in self.node.iter().enumerate() {
            for j in 0..m {
                g[(i, j)] = binom(k, j) * self.h.powi(j as i32);
            }
            let hm = self.h.powi(m as i32);
            for l in 0..n_u.min((k + 1).saturating_sub(m)) {
                g[(i, m + l)] = hm * binom(k - l - 1, m - 1);
            }
        }
        g
    }

    /// Rows mapping `z` to `D^ell f` for `ell < m`.
    fn constraint_rows(&self, ell: usize) -> DMatrix<f64> {
        let m = self.params.m();
        let n_u = self.n_u();
        let rows = self.cells - ell + 1;
        let r = m - ell;
        let mut a = DMatrix::<f64>::zeros(rows, m + n_u);
        let hr = self.h.powi(r as i32);
        for j in 0..rows {
            for jp in ell..m {
                a[(j, jp)] = binom(j, jp - ell) * self.h.powi((jp - ell) as i32);
            }
            for l in 0..n_u.min((j + 1).saturating_sub(r)) {
                a[(j, m + l)] = hr * binom(j - l - 1, r - 1);
            }
        }
        a
    }

    fn chi_rows(&self, config: &ChangePointConfig) -> Vec<f64> {
        let ell = config.ell();
        (0..=self.cells - ell)
            .map(|j| {
                let centre = (j as f64 + 0.5 * ell as f64) * self.h;
                f64::from(config.chi_unchecked(centre.clamp(0.0, 1.0)))
            })
            .collect()
    }
}

fn node_index(t: f64, cells: usize) -> Result<usize> {
    let x = t * cells as f64;
    let k = x.round();
    if (x - k).abs() > 1e-9 {
        return Err(Error::Setup(format!(
            "abscissa {t} is not a node of the {cells}-cell oracle grid"
        )));
    }
    Ok(k as usize)
}

/// Objective of one penalty stage in `z` coordinates.
struct Stage<'a> {
    dp: &'a DiscretePrimal,
    p: f64,
    mu: f64,
    g: &'a DMatrix<f64>,
    chi: &'a [f64],
    /// Dense constraint rows when `ell < m`.
    rows: Option<&'a DMatrix<f64>>,
}

impl Stage<'_> {
    fn m(&self) -> usize {
        self.dp.params.m()
    }

    fn fitted(&self, z: &[f64]) -> DVector<f64> {
        self.g * DVector::from_column_slice(z)
    }

    /// Constraint values `D^ell f` per row.
    fn cone_values(&self, z: &[f64]) -> Vec<f64> {
        match self.rows {
            Some(a) => (a * DVector::from_column_slice(z)).as_slice().to_vec(),
            None => z[self.m()..].to_vec(),
        }
    }

    fn violation(&self, z: &[f64]) -> f64 {
        self.cone_values(z)
            .iter()
            .zip(self.chi)
            .map(|(v, c)| (-c * v).max(0.0))
            .fold(0.0, f64::max)
    }

    fn value(&self, z: &[f64]) -> f64 {
        let dp = self.dp;
        let m = self.m();
        let penalty: f64 = z[m..].iter().map(|u| u.abs().powf(self.p)).sum();
        let fit = self.fitted(z);
        let data: f64 = (0..dp.y.len())
            .map(|i| dp.losses[i].rho(fit[i] - dp.y[i]))
            .sum();
        let hinge: f64 = self
            .cone_values(z)
            .iter()
            .zip(self.chi)
            .map(|(v, c)| (-c * v).max(0.0).powi(2))
            .sum();
        dp.lambda / self.p * dp.h * penalty + data + self.mu * dp.h * hinge
    }

    fn loss_derivs(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dp = self.dp;
        let fit = self.fitted(z);
        (0..dp.y.len())
            .map(|i| {
                let r = fit[i] - dp.y[i];
                let l = dp.losses[i];
                (l.rho_prime(r), l.rho_second(r).max(1e-6 * l.weight()))
            })
            .unzip()
    }

    /// Newton direction and the gradient.
    fn direction(&self, z: &[f64]) -> Option<(DVector<f64>, DVector<f64>)> {
        let dp = self.dp;
        let m = self.m();
        let nz = z.len();
        let n_u = nz - m;
        let (d1, d2) = self.loss_derivs(z);
        let mut grad = self.g.transpose() * DVector::from_vec(d1);

        let umax = z[m..].iter().fold(0.0f64, |s, u| s.max(u.abs()));
        let floor = if self.p < 2.0 {
            (1e-9 * umax).max(1e-12)
        } else {
            (1e-6 * umax).max(1e-300)
        };
        let lh = dp.lambda * dp.h;
        let mut diag = vec![0.0; n_u];
        for l in 0..n_u {
            let u = z[m + l];
            grad[m + l] += lh * u.abs().powf(self.p - 1.0) * u.signum();
            diag[l] = lh * (self.p - 1.0) * u.abs().max(floor).powf(self.p - 2.0);
        }
        let values = self.cone_values(z);
        let two_mu_h = 2.0 * self.mu * dp.h;
        let active: Vec<usize> = (0..values.len())
            .filter(|&j| self.chi[j] * values[j] < 0.0)
            .collect();

        match self.rows {
            None => {
                for &l in &active {
                    grad[m + l] += two_mu_h * values[l];
                    diag[l] += two_mu_h;
                }
                let dir = self.structured_solve(&grad, &diag, &d2)?;
                Some((dir, grad))
            }
            Some(a) => {
                for &j in &active {
                    let row = a.row(j);
                    grad += row.transpose() * (two_mu_h * values[j]);
                }
                let mut h =
                    self.g.transpose() * DMatrix::from_diagonal(&DVector::from_vec(d2)) * self.g;
                for l in 0..n_u {
                    h[(m + l, m + l)] += diag[l];
                }
                if !active.is_empty() {
                    let sub = DMatrix::from_fn(active.len(), nz, |r, c| a[(active[r], c)]);
                    h += sub.transpose() * &sub * two_mu_h;
                }
                let scale = h.diagonal().amax();
                let mut ridge = 1e-14 * scale;
                for _ in 0..8 {
                    let mut hr = h.clone();
                    for k in 0..nz {
                        hr[(k, k)] += ridge;
                    }
                    if let Some(ch) = hr.cholesky() {
                        return Some((ch.solve(&(-&grad)), grad));
                    }
                    ridge *= 100.0;
                }
                None
            }
        }
    }

    /// Solves `(blockdiag(0, D) + G^T W G) d = -grad` through an
    /// `(N + m)`-dimensional system in `s = W G d` and the leading block.
    fn structured_solve(
        &self,
        grad: &DVector<f64>,
        diag: &[f64],
        w: &[f64],
    ) -> Option<DVector<f64>> {
        let m = self.m();
        let n = self.g.nrows();
        let gc = self.g.columns(0, m);
        let gu = self.g.columns(m, self.g.ncols() - m);
        let dinv = DVector::from_iterator(diag.len(), diag.iter().map(|d| 1.0 / d));
        let gu_scaled = DMatrix::from_fn(n, diag.len(), |i, l| gu[(i, l)] * dinv[l]);
        let k = &gu_scaled * gu.transpose();
        let gvec_u = grad.rows(m, diag.len());
        let gc_grad = grad.rows(0, m);

        let mut sys = DMatrix::<f64>::zeros(n + m, n + m);
        sys.view_mut((0, 0), (n, n)).copy_from(&k);
        for i in 0..n {
            sys[(i, i)] += 1.0 / w[i];
        }
        sys.view_mut((0, n), (n, m)).copy_from(&(-gc));
        sys.view_mut((n, 0), (m, n)).copy_from(&gc.transpose());
        let mut rhs = DVector::<f64>::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-(&gu_scaled * gvec_u)));
        rhs.rows_mut(n, m).copy_from(&(-gc_grad));
        let sol = sys.lu().solve(&rhs)?;
        let s = sol.rows(0, n);
        let dc = sol.rows(n, m);
        let du = (-gvec_u - gu.transpose() * s).component_mul(&dinv);
        let mut d = DVector::<f64>::zeros(m + diag.len());
        d.rows_mut(0, m).copy_from(&dc);
        d.rows_mut(m, diag.len()).copy_from(&du);
        Some(d)
    }

    /// Damped Newton until the decrement is negligible. Returns iterations
    /// used and whether the stage converged.
    fn minimize(&self, z: &mut Vec<f64>, budget: usize) -> (usize, bool) {
        let mut value = self.value(z);
        for it in 0..budget {
            let Some((d, grad)) = self.direction(z) else {
                return (it, false);
            };
            let decrement = -grad.dot(&d);
            if !(decrement > 0.0) || decrement <= 1e-15 * (1.0 + value.abs()) {
                return (it, true);
            }
            let mut tau = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + tau * b).collect();
                let v = self.value(&trial);
                if v <= value - 1e-4 * tau * decrement {
                    *z = trial;
                    value = v;
                    moved = true;
                    break;
                }
                tau *= 0.5;
            }
            if !moved {
                // No representable decrease left.
                return (it + 1, decrement <= 1e-9 * (1.0 + value.abs()));
            }
        }
        (budget, false)
    }
}

/// Minimizes the discretized primal under the cone constraint, erroring when
/// the penalty continuation does not reach `feas_tol`.
pub fn solve_primal(
    dp: &DiscretePrimal,
    config: &ChangePointConfig,
    opts: &OracleOptions,
    init: Option<&[f64]>,
) -> Result<OracleSolution> {
    let sol = solve_primal_unchecked(dp, config, opts, init)?;
    if !sol.converged {
        return Err(Error::OracleNotConverged {
            violation: sol.violation,
            iterations: sol.newton_iterations,
            mu: sol.mu,
        });
    }
    Ok(sol)
}

/// Like [`solve_primal`] but returns the last iterate even without
/// convergence (useful with a small iteration budget).
pub fn solve_primal_unchecked(
    dp: &DiscretePrimal,
    config: &ChangePointConfig,
    opts: &OracleOptions,
    init: Option<&[f64]>,
) -> Result<OracleSolution> {
    let m = dp.params.m();
    let ell = config.ell();
    if ell > m {
        return Err(Error::Invalid(format!("ell = {ell} exceeds m = {m}")));
    }
    let p = dp.params.p();
    if !opts.allow_any_p && !(P_RANGE.0..=P_RANGE.1).contains(&p) {
        return Err(Error::Unsupported(format!(
            "oracle accepts p in [{}, {}] unless overridden, got {p}",
            P_RANGE.0, P_RANGE.1
        )));
    }
    for &x in config.points() {
        node_index(x, dp.cells)?;
    }
    let g = dp.data_rows();
    let chi = dp.chi_rows(config);
    let rows = (ell < m).then(|| dp.constraint_rows(ell));
    let mut z = match init {
        Some(f) if f.len() == dp.cells + 1 => dp.compress(f),
        Some(f) => {
            return Err(Error::Invalid(format!(
                "initial f has {} values, expected {}",
                f.len(),
                dp.cells + 1
            )))
        }
        None => vec![0.0; m + dp.n_u()],
    };

    let mut mu = opts.mu_start;
    let mut total = 0;
    let stage = |p: f64, mu: f64| Stage {
        dp,
        p,
        mu,
        g: &g,
        chi: &chi,
        rows: rows.as_ref(),
    };
    if init.is_none() && p != 2.0 {
        let (used, _) = stage(2.0, mu).minimize(&mut z, opts.max_newton.min(opts.max_total));
        total += used;
    }
    let mut converged = false;
    loop {
        let st = stage(p, mu);
        let budget = opts.max_newton.min(opts.max_total.saturating_sub(total));
        let (used, ok) = st.minimize(&mut z, budget);
        total += used;
        let violation = st.violation(&z);
        if !ok || total >= opts.max_total {
            break;
        }
        if violation <= opts.feas_tol {
            converged = true;
            break;
        }
        if mu * 10.0 > opts.mu_max {
            break;
        }
        mu = (mu * 10.0).max(1.0);
    }
    let st = stage(p, mu);
    let f = dp.expand(&z);
    Ok(OracleSolution {
        grid: dp.grid(),
        objective: dp.objective(&f),
        violation: st.violation(&z),
        deriv: z[m..].to_vec(),
        f,
        mu,
        newton_iterations: total,
        converged,
    })
}

/// Scaled stationarity residual on the inactive part of the grid.
///
/// Returns `max |∂VP/∂f_k|` over nodes whose every touching constraint row is
/// strictly inactive, excluding change points, divided by
/// `max(h, max_i |rho_i'|)`.
pub fn euler_lagrange_residual(dp: &DiscretePrimal, config: &ChangePointConfig, f: &[f64]) -> f64 {
    let m = dp.params.m();
    let p = dp.params.p();
    let h = dp.h;
    let ell = config.ell();
    let u = dp.differences(f, m);
    let mut grad = vec![0.0; f.len()];
    let scale = dp.lambda * h / h.powi(m as i32);
    for (l, &ul) in u.iter().enumerate() {
        let phi = ul.abs().powf(p - 1.0) * ul.signum() * scale;
        for r in 0..=m {
            let sign = if (m - r).is_multiple_of(2) { 1.0 } else { -1.0 };
            grad[l + r] += phi * sign * binom(m, r);
        }
    }
    let mut rho_max: f64 = 0.0;
    for (i, &k) in dp.node.iter().enumerate() {
        let d = dp.losses[i].rho_prime(f[k] - dp.y[i]);
        grad[k] += d;
        rho_max = rho_max.max(d.abs());
    }
    let chi = dp.chi_rows(config);
    let cone = dp.differences(f, ell);
    let cmax = cone.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let thresh = 1e-6 * cmax.max(1e-300);
    let mut worst: f64 = 0.0;
    for k in 0..f.len() {
        let x = k as f64 * h;
        if config.points().iter().any(|&c| (c - x).abs() < 0.5 * h) {
            continue;
        }
        let lo = k.saturating_sub(ell);
        let hi = k.min(cone.len() - 1);
        let inactive = (lo..=hi).all(|j| chi[j] * cone[j] > thresh);
        if inactive {
            worst = worst.max(grad[k].abs());
        }
    }
    worst / h.max(rho_max)
}
