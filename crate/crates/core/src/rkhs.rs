//! Taylor representation and reproducing kernel of `W_{m,p}[0, 1]`.
//!
//! Every `f` splits as `sum_j a_j t^j / j! + ∫_0^t (t - s)^{m-1} / (m-1)! f^(m)(s) ds`
//! with `a_j = f^(j)(0)`. Point evaluation at `t_i` is represented by the
//! kernel section `R(t_i, .)`, whose `m`-th derivative is the truncated power
//! `(t_i - s)_+^{m-1} / (m-1)!`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::CellFunction;

/// Penalty order `m` and exponent `p` (with its conjugate `q`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevParams {
    m: usize,
    p: f64,
    q: f64,
}

impl SobolevParams {
    pub fn new(m: usize, p: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Invalid("penalty order m must be >= 1".into()));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::Invalid(format!(
                "exponent p must lie in the open interval (1, ∞), got {p}"
            )));
        }
        Ok(Self {
            m,
            p,
            q: p / (p - 1.0),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `P_j(t) = t^j / j!`.
pub fn poly_basis(j: usize, t: f64) -> f64 {
    t.powi(j as i32) / factorial(j)
}

/// `(t - s)^{m-1} / (m-1)!` for `s <= t`; no truncation applied.
#[inline]
pub(crate) fn taylor_weight(m: usize, t: f64, s: f64) -> f64 {
    match m {
        1 => 1.0,
        2 => t - s,
        3 => 0.5 * (t - s) * (t - s),
        _ => (t - s).powi(m as i32 - 1) / factorial(m - 1),
    }
}

/// `m`-th derivative in `s` of the kernel section at `t_i`:
/// `(t_i - s)_+^{m-1} / (m-1)!`, the indicator of `s < t_i` when `m = 1`.
pub fn representer_deriv(params: &SobolevParams, t_i: f64, s: f64) -> f64 {
    if s < t_i {
        taylor_weight(params.m, t_i, s)
    } else {
        0.0
    }
}

/// Coefficients (ascending powers of `u`) of `(c - u)^n`.
fn shifted_power(c: f64, n: usize) -> Vec<f64> {
    let mut coef = vec![0.0; n + 1];
    let mut binom = 1.0;
    for k in 0..=n {
        coef[k] = binom * c.powi((n - k) as i32) * if k % 2 == 0 { 1.0 } else { -1.0 };
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    coef
}

/// Reproducing kernel `R(t, s)`, with the integral part in closed form.
pub fn kernel(params: &SobolevParams, t: f64, s: f64) -> f64 {
    let m = params.m;
    let poly: f64 = (0..m).map(|j| poly_basis(j, t) * poly_basis(j, s)).sum();
    let upper = t.min(s);
    if upper <= 0.0 {
        return poly;
    }
    let a = shifted_power(t, m - 1);
    let b = shifted_power(s, m - 1);
    let mut integral = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let k = i + j + 1;
            integral += ai * bj * upper.powi(k as i32) / k as f64;
        }
    }
    let f = factorial(m - 1);
    poly + integral / (f * f)
}

/// The element representing point evaluation at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representer {
    pub t: f64,
    /// `P_j(t)` for `j < m`.
    pub poly: Vec<f64>,
    m: usize,
}

impl Representer {
    pub fn new(params: &SobolevParams, t: f64) -> Self {
        Self {
            t,
            poly: (0..params.m).map(|j| poly_basis(j, t)).collect(),
            m: params.m,
        }
    }

    /// `(t - s)_+^{m-1} / (m-1)!`.
    pub fn deriv(&self, s: f64) -> f64 {
        if s < self.t {
            taylor_weight(self.m, self.t, s)
        } else {
            0.0
        }
    }
}

/// `f(t)` from Taylor coefficients `a_j = f^(j)(0)` and a gridded `f^(m)`.
pub fn evaluate_from_parts(
    params: &SobolevParams,
    a: &[f64],
    deriv: &CellFunction,
    t: f64,
) -> Result<f64> {
    if a.len() != params.m {
        return Err(Error::Invalid(format!(
            "expected {} polynomial coefficients, got {}",
            params.m,
            a.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    let poly: f64 = a
        .iter()
        .enumerate()
        .map(|(j, aj)| aj * poly_basis(j, t))
        .sum();
    if t == 0.0 {
        return Ok(poly);
    }
    if deriv.is_empty() || deriv.start() > 0.0 || deriv.end() < t {
        return Err(Error::Domain(format!(
            "derivative grid does not cover [0, {t}]"
        )));
    }
    let m = params.m;
    let remainder = deriv.integrate_to(t, |s| taylor_weight(m, t, s))?;
    Ok(poly + remainder)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    fn uniform(n: usize, f: impl Fn(f64) -> f64) -> CellFunction {
        let x: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let v: Vec<f64> = x.iter().map(|&s| f(s)).collect();
        CellFunction::from_nodes(&x, &v).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SobolevParams::new(0, 2.0).is_err());
        assert!(SobolevParams::new(2, 1.0).is_err());
        let p = SobolevParams::new(2, 3.0).unwrap();
        assert!((1.0 / p.p() + 1.0 / p.q() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_examples() {
        let p1 = SobolevParams::new(1, 2.0).unwrap();
        assert!((kernel(&p1, 0.3, 0.7) - 1.3).abs() < 1e-15);
        assert_eq!(kernel(&p1, 0.0, 0.42), 1.0);

        let p2 = SobolevParams::new(2, 2.0).unwrap();
        let oracle = 2.0 + simpson(|u| (1.0 - u) * (1.0 - u), 0.0, 1.0, 2000);
        assert!((kernel(&p2, 1.0, 1.0) - oracle).abs() < 1e-10);
        assert!((kernel(&p2, 1.0, 1.0) - (2.0 + 1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn kernel_matches_quadrature_and_is_symmetric() {
        for m in 1..=4 {
            let p = SobolevParams::new(m, 2.0).unwrap();
            for &(t, s) in &[(0.2, 0.9), (0.55, 0.35), (1.0, 0.6)] {
                let f = factorial(m - 1);
                let poly: f64 = (0..m).map(|j| poly_basis(j, t) * poly_basis(j, s)).sum();
                let q = simpson(
                    |u| (t - u).powi(m as i32 - 1) * (s - u).powi(m as i32 - 1) / (f * f),
                    0.0,
                    t.min(s),
                    2000,
                );
                assert!((kernel(&p, t, s) - poly - q).abs() < 1e-11, "m={m}");
                assert!((kernel(&p, t, s) - kernel(&p, s, t)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn representer_deriv_examples() {
        let p2 = SobolevParams::new(2, 2.0).unwrap();
        assert_eq!(representer_deriv(&p2, 0.5, 0.25), 0.25);
        assert_eq!(representer_deriv(&p2, 0.5, 0.75), 0.0);
        let p3 = SobolevParams::new(3, 2.0).unwrap();
        assert_eq!(representer_deriv(&p3, 1.0, 0.0), 0.5);
        let p1 = SobolevParams::new(1, 2.0).unwrap();
        assert_eq!(representer_deriv(&p1, 0.5, 0.2), 1.0);
        assert_eq!(representer_deriv(&p1, 0.5, 0.5), 0.0);
        let r = Representer::new(&p3, 0.5);
        assert_eq!(r.poly, vec![1.0, 0.5, 0.125]);
        assert!(r.deriv(0.7) == 0.0 && r.deriv(0.1) >= 0.0);
    }

    #[test]
    fn representer_deriv_is_mth_kernel_derivative() {
        // m-th finite difference of s -> R(t_i, s) on s < t_i.
        let h: f64 = 1e-3;
        for m in 1..=3usize {
            let p = SobolevParams::new(m, 2.0).unwrap();
            let ti = 0.8;
            for &s in &[0.2, 0.45, 0.6] {
                let mut fd = 0.0;
                let mut binom = 1.0;
                for k in 0..=m {
                    let sign = if (m - k) % 2 == 0 { 1.0 } else { -1.0 };
                    let x = s + (k as f64 - m as f64 / 2.0) * h;
                    fd += sign * binom * kernel(&p, ti, x);
                    binom = binom * (m - k) as f64 / (k + 1) as f64;
                }
                fd /= h.powi(m as i32);
                let exact = representer_deriv(&p, ti, s);
                assert!(
                    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                    "m={m} s={s}"
                );
            }
        }
    }

    #[test]
    fn evaluate_from_parts_examples() {
        let p2 = SobolevParams::new(2, 2.0).unwrap();
        let zero = uniform(8, |_| 0.0);
        assert_eq!(
            evaluate_from_parts(&p2, &[1.0, 2.0], &zero, 0.5).unwrap(),
            2.0
        );
        let two = uniform(8, |_| 2.0);
        assert!((evaluate_from_parts(&p2, &[0.0, 0.0], &two, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let p3 = SobolevParams::new(3, 2.0).unwrap();
        let six = uniform(64, |_| 6.0);
        assert!((evaluate_from_parts(&p3, &[0.0; 3], &six, 0.5).unwrap() - 0.125).abs() < 1e-4);
    }

    #[test]
    fn evaluate_from_parts_errors() {
        let p2 = SobolevParams::new(2, 2.0).unwrap();
        let half = CellFunction::from_nodes(&[0.0, 0.5], &[0.0, 0.0]).unwrap();
        assert!(evaluate_from_parts(&p2, &[0.0, 0.0], &half, 0.8).is_err());
        assert!(evaluate_from_parts(&p2, &[0.0], &half, 0.2).is_err());
    }

    #[test]
    fn reproducing_identity_on_smooth_function() {
        // f(t) = sin(3t) + t^4: pairing with R_t reproduces f(t).
        for m in 1..=3usize {
            let p = SobolevParams::new(m, 2.0).unwrap();
            let derivs = |k: usize, t: f64| -> f64 {
                let s = match k % 4 {
                    0 => (3.0 * t).sin(),
                    1 => (3.0 * t).cos(),
                    2 => -(3.0 * t).sin(),
                    _ => -(3.0 * t).cos(),
                } * 3f64.powi(k as i32);
                let poly = match k {
                    0 => t.powi(4),
                    1 => 4.0 * t.powi(3),
                    2 => 12.0 * t * t,
                    3 => 24.0 * t,
                    4 => 24.0,
                    _ => 0.0,
                };
                s + poly
            };
            let a: Vec<f64> = (0..m).map(|j| derivs(j, 0.0)).collect();
            let fm = uniform(4096, |s| derivs(m, s));
            for &t in &[0.1, 0.5, 0.93, 1.0] {
                let v = evaluate_from_parts(&p, &a, &fm, t).unwrap();
                assert!((v - derivs(0, t)).abs() < 1e-5, "m={m} t={t}: {v}");
            }
        }
    }
}
