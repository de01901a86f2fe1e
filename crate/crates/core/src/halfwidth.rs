//! Local bandwidth diagnostics.
//!
//! Linearizing the Euler-Lagrange equation around the estimate suggests the
//! spline acts like a kernel smoother with halfwidth
//! `h_eff ~ [lambda F'(t) |f^(m)(t)|^{p-2}]^{1/(2m)}`, compared here with the
//! MSE-optimal `h_mse ~ [N |f^(m)|^2]^{-1/(2m+1)}`. Both are reported with
//! proportionality constant 1. The influence probe measures the actual width
//! of the fit's response to a perturbed observation.

use serde::Serialize;

use crate::cone::ChangePointConfig;
use crate::dual::{DualOptions, DualProblem};
use crate::error::{Error, Result};
use crate::problem::{Observations, ProblemSpec};
use crate::recovery::{recover, SplineEstimate};

/// Heuristic effective halfwidth; `None` where `f^(m) = 0` and `p < 2`.
pub fn h_eff(lambda: f64, fprime: f64, fm_abs: f64, m: usize, p: f64) -> Option<f64> {
    let fm_term = if p == 2.0 {
        1.0
    } else if fm_abs == 0.0 {
        if p < 2.0 {
            return None;
        }
        0.0
    } else {
        fm_abs.powf(p - 2.0)
    };
    Some((lambda * fprime * fm_term).powf(1.0 / (2 * m) as f64))
}

/// MSE-optimal halfwidth scale; `None` where `f^(m) = 0`.
pub fn h_mse(n: usize, fm_abs: f64, m: usize) -> Option<f64> {
    if fm_abs == 0.0 || n == 0 {
        return None;
    }
    Some((n as f64 * fm_abs * fm_abs).powf(-1.0 / (2 * m + 1) as f64))
}

/// Gaussian kernel density estimate of the design on `[0, 1]`, with the
/// normal-reference bandwidth and reflection at both ends.
pub fn design_density(t: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n < 2 {
        return Err(Error::Invalid(
            "density estimate needs two abscissae".into(),
        ));
    }
    let mean = t.iter().sum::<f64>() / n as f64;
    let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let bw = 1.06 * var.sqrt() * (n as f64).powf(-0.2);
    if !(bw > 0.0) {
        return Err(Error::Invalid("abscissae have zero spread".into()));
    }
    let norm = 1.0 / (n as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    let kernel = |u: f64| (-0.5 * u * u).exp();
    Ok(at
        .iter()
        .map(|&x| {
            norm * t
                .iter()
                .map(|&ti| {
                    kernel((x - ti) / bw) + kernel((x + ti) / bw) + kernel((x - (2.0 - ti)) / bw)
                })
                .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HalfwidthReport {
    pub grid: Vec<f64>,
    pub h_eff: Vec<Option<f64>>,
    pub h_mse: Vec<Option<f64>>,
    pub density: Vec<f64>,
}

/// Halfwidths of a fitted estimate on an output grid.
pub fn report(
    estimate: &SplineEstimate,
    obs: &Observations,
    lambda: f64,
    grid: &[f64],
) -> Result<HalfwidthReport> {
    let params = estimate.params();
    let (m, p) = (params.m(), params.p());
    let density = design_density(obs.t(), grid)?;
    let mut he = Vec::with_capacity(grid.len());
    let mut hm = Vec::with_capacity(grid.len());
    for (&x, &d) in grid.iter().zip(&density) {
        let fm = estimate.deriv_at(x)?.abs();
        he.push(h_eff(lambda, d, fm, m, p));
        hm.push(h_mse(obs.len(), fm, m));
    }
    Ok(HalfwidthReport {
        grid: grid.to_vec(),
        h_eff: he,
        h_mse: hm,
        density,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InfluenceProbe {
    pub index: usize,
    pub epsilon: f64,
    pub grid: Vec<f64>,
    /// `(f_perturbed - f) / epsilon` on the grid.
    pub response: Vec<f64>,
    /// Full width at half maximum of the response peak around `t_j`.
    pub fwhm: Option<f64>,
}

/// Refits with `y_j + epsilon` and measures the width of the response.
#[allow(clippy::too_many_arguments)]
pub fn influence_probe(
    obs: &Observations,
    spec: &ProblemSpec,
    config: &ChangePointConfig,
    cells: usize,
    opts: &DualOptions,
    index: usize,
    epsilon: f64,
    grid: &[f64],
) -> Result<InfluenceProbe> {
    if index >= obs.len() {
        return Err(Error::Invalid(format!(
            "probe index {index} out of range for {} observations",
            obs.len()
        )));
    }
    if !(epsilon != 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(
            "probe epsilon must be finite and non-zero".into(),
        ));
    }
    let fit = |o: &Observations| -> Result<Vec<f64>> {
        let problem = DualProblem::new(o, spec, config, cells)?;
        let sol = problem.solve(opts)?;
        let est = recover(&problem, &sol)?;
        grid.iter().map(|&x| est.evaluate(x)).collect()
    };
    let base = fit(obs)?;
    let mut y = obs.y().to_vec();
    y[index] += epsilon;
    let pert = fit(&obs.with_values(y)?)?;
    let response: Vec<f64> = pert
        .iter()
        .zip(&base)
        .map(|(a, b)| (a - b) / epsilon)
        .collect();
    let fwhm = fwhm(grid, &response, obs.t()[index]);
    Ok(InfluenceProbe {
        index,
        epsilon,
        grid: grid.to_vec(),
        response,
        fwhm,
    })
}

/// Width of the peak containing the maximum, if the maximum lies within
/// `0.1` of `centre` and the half-maximum crossings exist on both sides.
pub fn fwhm(grid: &[f64], response: &[f64], centre: f64) -> Option<f64> {
    let (peak, &top) = response
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(top > 0.0) || (grid[peak] - centre).abs() > 0.1 {
        return None;
    }
    let half = 0.5 * top;
    let crossing = |k: usize, j: usize| -> f64 {
        let (x0, x1, r0, r1) = (grid[k], grid[j], response[k], response[j]);
        x0 + (half - r0) * (x1 - x0) / (r1 - r0)
    };
    let left = (0..peak)
        .rev()
        .find(|&k| response[k] < half)
        .map(|k| crossing(k, k + 1))?;
    let right = (peak + 1..response.len())
        .find(|&k| response[k] < half)
        .map(|k| crossing(k - 1, k))?;
    Some(right - left)
}
