//! Change-point locations for a fixed number `K` of sign changes (`ell = m`).
//!
//! The profile value of a configuration is the optimal primal value for
//! those change points, obtained as minus the dual minimum. The search is an
//! exhaustive sweep over non-decreasing `K`-tuples of a coarse grid on
//! `[0, 1]` and both or one orientation, followed by coordinate-wise
//! golden-section refinement of the incumbent.

use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{ChangePointConfig, Orientation};
use crate::dual::{DualOptions, DualProblem};
use crate::error::{Error, Result};
use crate::problem::{Observations, ProblemSpec};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SHAPESPLINE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub k: usize,
    pub orientations: Vec<Orientation>,
    /// Number of coarse grid points on `[0, 1]`, endpoints included.
    pub grid_points: usize,
    /// Rounds of golden-section refinement.
    pub refine: usize,
    pub cells: usize,
    pub opts: DualOptions,
}

impl SearchSpec {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            orientations: Orientation::both().to_vec(),
            grid_points: 21,
            refine: 3,
            cells: crate::dual::DEFAULT_GRID_CELLS,
            opts: DualOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub points: Vec<f64>,
    pub orientation: Orientation,
    /// Profile value, `None` when the inner solve failed.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub points: Vec<f64>,
    pub orientation: Orientation,
    pub value: f64,
    /// Every evaluated candidate, coarse sweep first, in evaluation order.
    pub table: Vec<Candidate>,
}

/// Optimal primal value for fixed change points (any order).
pub fn profile_objective(
    obs: &Observations,
    spec: &ProblemSpec,
    points: &[f64],
    orientation: Orientation,
    cells: usize,
    opts: &DualOptions,
) -> Result<f64> {
    let config = ChangePointConfig::new(spec.params.m(), points.to_vec(), orientation)?;
    let problem = DualProblem::new(obs, spec, &config, cells)?;
    Ok(-problem.solve(opts)?.objective)
}

/// Thread pool honouring [`THREADS_ENV`].
fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Setup(format!("cannot start worker threads: {e}")))
}

/// Non-decreasing index tuples of length `k` over `0..g`.
fn tuples(g: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    if k == 0 {
        return vec![Vec::new()];
    }
    loop {
        out.push(cur.clone());
        let mut pos = k;
        while pos > 0 && cur[pos - 1] == g - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        let next = cur[pos - 1] + 1;
        for c in &mut cur[pos - 1..] {
            *c = next;
        }
    }
}

fn evaluate(
    obs: &Observations,
    spec: &ProblemSpec,
    search: &SearchSpec,
    points: Vec<f64>,
    orientation: Orientation,
) -> Candidate {
    let value = profile_objective(obs, spec, &points, orientation, search.cells, &search.opts).ok();
    let mut points = points;
    points.sort_by(f64::total_cmp);
    Candidate {
        points,
        orientation,
        value,
    }
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    match (a.value, b.value) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        _ => false,
    }
}

pub fn search(obs: &Observations, spec: &ProblemSpec, search: &SearchSpec) -> Result<SearchResult> {
    if search.orientations.is_empty() {
        return Err(Error::Invalid("no orientation to search".into()));
    }
    if search.grid_points < 2 {
        return Err(Error::Invalid(
            "coarse grid needs at least two points".into(),
        ));
    }
    let g = search.grid_points;
    let coarse: Vec<f64> = (0..g).map(|j| j as f64 / (g - 1) as f64).collect();
    let jobs: Vec<(Vec<f64>, Orientation)> = search
        .orientations
        .iter()
        .flat_map(|&o| tuples(g, search.k).into_iter().map(move |idx| (idx, o)))
        .map(|(idx, o)| (idx.iter().map(|&j| coarse[j]).collect(), o))
        .collect();
    let pool = pool()?;
    let mut table: Vec<Candidate> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(pts, o)| evaluate(obs, spec, search, pts, o))
            .collect()
    });

    let mut best = table
        .iter()
        .fold(None::<&Candidate>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .filter(|c| c.value.is_some())
        .cloned()
        .ok_or(Error::AllCandidatesFailed)?;

    let mut delta = 1.0 / (g - 1) as f64;
    for _ in 0..search.refine {
        for coord in 0..search.k {
            let lo = if coord == 0 {
                0.0
            } else {
                best.points[coord - 1]
            };
            let hi = if coord + 1 == search.k {
                1.0
            } else {
                best.points[coord + 1]
            };
            let a = (best.points[coord] - delta).max(lo);
            let b = (best.points[coord] + delta).min(hi);
            if b - a <= 1e-12 {
                continue;
            }
            let incumbent = best.clone();
            let eval_at = |x: f64, table: &mut Vec<Candidate>| -> f64 {
                let mut pts = incumbent.points.clone();
                pts[coord] = x;
                let c = evaluate(obs, spec, search, pts, incumbent.orientation);
                let v = c.value.unwrap_or(f64::INFINITY);
                table.push(c);
                v
            };
            let found = golden_section(a, b, 1e-3 * delta, |x| eval_at(x, &mut table));
            if let Some(c) = table
                .iter()
                .rev()
                .take(found)
                .filter(|c| better(c, &best))
                .fold(None::<&Candidate>, |acc, c| match acc {
                    Some(b) if !better(c, b) => Some(b),
                    _ => Some(c),
                })
            {
                best = c.clone();
            }
        }
        delta *= 0.5;
    }

    Ok(SearchResult {
        points: best.points.clone(),
        orientation: best.orientation,
        value: best.value.expect("incumbent has a value"),
        table,
    })
}

/// Golden-section minimization on `[a, b]`; returns the number of evaluations.
fn golden_section(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> usize {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    while b - a > tol && evals < 60 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    evals
}

/// Best value for every `K` in `0..=k_max`, for inspecting the choice of `K`.
pub fn best_by_k(
    obs: &Observations,
    spec: &ProblemSpec,
    base: &SearchSpec,
    k_max: usize,
) -> Result<Vec<SearchResult>> {
    (0..=k_max)
        .map(|k| {
            let s = SearchSpec { k, ..base.clone() };
            search(obs, spec, &s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rkhs::SobolevParams;

    fn kink(n: usize) -> (Observations, ProblemSpec) {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| (t - 0.5).abs()).collect();
        let o = Observations::new(t, y, None).unwrap();
        let spec = ProblemSpec::quadratic(SobolevParams::new(1, 2.0).unwrap(), 1e-3, &o).unwrap();
        (o, spec)
    }

    #[test]
    fn tuples_are_nondecreasing_and_complete() {
        let t = tuples(4, 2);
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|v| v[0] <= v[1]));
        assert_eq!(tuples(5, 0), vec![Vec::<usize>::new()]);
        assert_eq!(tuples(3, 3).len(), 10);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let mut best = (f64::INFINITY, 0.0);
        golden_section(0.0, 1.0, 1e-8, |x| {
            let v = (x - 0.3).powi(2);
            if v < best.0 {
                best = (v, x);
            }
            v
        });
        assert!((best.1 - 0.3).abs() < 1e-6);
    }

    #[test]
    fn unsorted_points_are_accepted() {
        let (o, spec) = kink(11);
        let opts = DualOptions::default();
        let a =
            profile_objective(&o, &spec, &[0.7, 0.3], Orientation::Negative, 256, &opts).unwrap();
        let b =
            profile_objective(&o, &spec, &[0.3, 0.7], Orientation::Negative, 256, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kink_is_located() {
        let (o, spec) = kink(21);
        let s = SearchSpec {
            grid_points: 11,
            refine: 2,
            cells: 512,
            ..SearchSpec::new(1)
        };
        let r = search(&o, &spec, &s).unwrap();
        assert_eq!(r.orientation, Orientation::Negative);
        assert!((r.points[0] - 0.5).abs() <= 0.05, "{:?}", r.points);
        let min = r
            .table
            .iter()
            .filter_map(|c| c.value)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.value);
    }

    #[test]
    fn search_is_deterministic() {
        let (o, spec) = kink(11);
        let s = SearchSpec {
            grid_points: 6,
            refine: 1,
            cells: 128,
            ..SearchSpec::new(1)
        };
        assert_eq!(
            search(&o, &spec, &s).unwrap(),
            search(&o, &spec, &s).unwrap()
        );
    }
}
