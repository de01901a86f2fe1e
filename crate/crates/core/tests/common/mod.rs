#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapespline::*;

/// A randomized fitting problem whose abscissae and change points lie on
/// the grid `k / 64`, so the primal oracle can use any multiple of 64 cells.
pub struct Instance {
    pub obs: Observations,
    pub spec: ProblemSpec,
    pub config: ChangePointConfig,
    pub label: String,
}

/// Instance `index` of a fixed family cycling through m in {1, 2, 3},
/// p in {1.5, 2, 3}, K in {0, 1, 2} and quadratic/Huber losses.
pub fn instance(index: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index as u64);
    let n = rng.random_range(5..=40usize);
    let m = [1usize, 2, 3][index % 3];
    let p = [1.5, 2.0, 3.0][(index / 3) % 3];
    let k = index % 3;
    let huber = index % 2 == 1;
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, 63, n)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.sort_unstable();
    let t: Vec<f64> = idx.iter().map(|&i| i as f64 / 64.0).collect();
    let y: Vec<f64> = t
        .iter()
        .map(|&t| (5.0 * t).sin() + 0.1 * rng.random::<f64>())
        .collect();
    let mut pts: Vec<f64> = (0..k)
        .map(|_| rng.random_range(8..56) as f64 / 64.0)
        .collect();
    pts.sort_by(f64::total_cmp);
    let orientation = if rng.random::<bool>() {
        Orientation::Positive
    } else {
        Orientation::Negative
    };
    let config = ChangePointConfig::new(m, pts, orientation).unwrap();
    let lambda = 10f64.powf(rng.random_range(-3.0..-1.0));
    let obs = Observations::new(t, y, None).unwrap();
    let params = SobolevParams::new(m, p).unwrap();
    let spec = if huber {
        ProblemSpec::huber(params, lambda, 0.05, &obs).unwrap()
    } else {
        ProblemSpec::quadratic(params, lambda, &obs).unwrap()
    };
    let label = format!(
        "#{index} N={n} m={m} p={p} K={k} {} lambda={lambda:.1e}",
        if huber { "huber" } else { "quadratic" }
    );
    Instance {
        obs,
        spec,
        config,
        label,
    }
}

pub fn uniform(points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| k as f64 / (points - 1) as f64)
        .collect()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn fit(
    obs: &Observations,
    spec: &ProblemSpec,
    config: &ChangePointConfig,
    cells: usize,
) -> (DualProblem, DualSolution, SplineEstimate) {
    let problem = DualProblem::new(obs, spec, config, cells).unwrap();
    let solution = problem.solve(&DualOptions::default()).unwrap();
    let estimate = recover(&problem, &solution).unwrap();
    (problem, solution, estimate)
}
