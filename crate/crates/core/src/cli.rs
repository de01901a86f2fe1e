//! Command-line front end.
//!
//! Reads `t,y[,sigma]` CSV, runs one command and writes a JSON report and
//! CSV grids to `--out`. Exit codes: 0 success, 2 invalid input or
//! configuration, 3 solver failure.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use crate::changepoint::{self, SearchSpec};
use crate::cone::{ChangePointConfig, Orientation};
use crate::dual::{DualOptions, DualProblem, DualSolution, DEFAULT_GRID_CELLS};
use crate::error::{Error, Result};
use crate::halfwidth;
use crate::oracle::{self, DiscretePrimal, OracleOptions, OracleSolution};
use crate::problem::{Observations, ProblemSpec};
use crate::recovery::{kkt_report, recover, KktReport, SplineEstimate};
use crate::rkhs::SobolevParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "shapespline",
    version,
    about = "Shape-constrained robust smoothing splines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a spline for fixed change points.
    Fit(FitArgs),
    /// Locate K change points by profile search.
    SearchChangepoints(SearchArgs),
    /// Effective and MSE-optimal halfwidths, with optional influence probes.
    DiagnoseHalfwidth(HalfwidthArgs),
    /// Solve primal and dual on one instance and report the duality gap.
    OracleCheck(OracleArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Quadratic,
    Huber,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// CSV file with header `t,y` and an optional `sigma` column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Penalty exponent, in (1, ∞).
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Derivative order of the shape constraint; defaults to m.
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub changepoints: Vec<f64>,
    /// Sign of the constrained derivative on the first segment.
    #[arg(long, default_value = "+1", allow_hyphen_values = true)]
    pub orientation: String,
    #[arg(long, value_enum, default_value_t = LossKind::Quadratic)]
    pub loss: LossKind,
    #[arg(long = "huber-c", default_value_t = 1.345)]
    pub huber_c: f64,
    /// Quadrature cells on [0, 1].
    #[arg(long, default_value_t = DEFAULT_GRID_CELLS)]
    pub grid: usize,
    #[arg(long = "grad-tol", default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long = "feas-tol", default_value_t = 1e-10)]
    pub feas_tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Directory for the JSON report and CSV grids.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of the summary printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Points of the output grid on [0, 1].
    #[arg(long = "out-points", default_value_t = 201)]
    pub out_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long = "K", default_value_t = 1)]
    pub k: usize,
    #[arg(long = "grid-G", default_value_t = 21)]
    pub grid_g: usize,
    #[arg(long, default_value_t = 3)]
    pub refine: usize,
    /// `both`, `+1` or `-1`.
    #[arg(long, default_value = "both", allow_hyphen_values = true)]
    pub orientations: String,
    /// Also report the best value for every K up to this bound.
    #[arg(long = "k-max")]
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct HalfwidthArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Observation index to perturb; repeatable.
    #[arg(long)]
    pub probe: Vec<usize>,
    /// Perturbation size; defaults to 1e-3 times the range of y.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Accept p outside [1.2, 4] in the primal solver.
    #[arg(long = "allow-any-p")]
    pub allow_any_p: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeKind {
    AbsKink,
    MonotoneSmooth,
    ConvexQuad,
    Custom,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeKind,
    /// Polynomial coefficients `c0,c1,...` for `custom`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coefficients: Vec<f64>,
    #[arg(long = "N")]
    pub n: usize,
    #[arg(long = "noise-sd", default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `data.csv`; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Test function for [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `|t - 0.5|`
    AbsKink,
    /// `1 / (1 + exp(-8 (t - 0.5)))`
    MonotoneSmooth,
    /// `(t - 0.5)^2`
    ConvexQuad,
    /// `sum_j c_j t^j`
    Custom(Vec<f64>),
}

impl Shape {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Shape::AbsKink => (t - 0.5).abs(),
            Shape::MonotoneSmooth => 1.0 / (1.0 + (-8.0 * (t - 0.5)).exp()),
            Shape::ConvexQuad => (t - 0.5).powi(2),
            Shape::Custom(c) => c.iter().rev().fold(0.0, |acc, cj| acc * t + cj),
        }
    }
}

/// Equispaced design `t_i = i / (N - 1)` with Gaussian noise.
pub fn simulate(shape: &Shape, n: usize, noise_sd: f64, seed: u64) -> Result<Observations> {
    if n < 2 {
        return Err(Error::Invalid(format!("simulate needs N >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Invalid(format!(
            "noise sd must be >= 0, got {noise_sd}"
        )));
    }
    let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y = t
        .iter()
        .map(|&x| shape.eval(x) + normal.sample(&mut rng))
        .collect();
    Observations::new(t, y, None)
}

/// Parses `t,y[,sigma]` CSV. Rows are sorted by `t`; line numbers in errors
/// refer to the input text.
pub fn parse_dataset(reader: impl Read) -> Result<Observations> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ti), Some(yi)) = (col("t"), col("y")) else {
        return Err(Error::Parse {
            line: 1,
            message: "header must contain columns `t` and `y`".into(),
        });
    };
    let si = col("sigma");
    let mut rows: Vec<(usize, f64, f64, Option<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing `{name}`"),
            })?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("`{name}` is not a finite number: `{raw}`"),
                })
        };
        let t = field(ti, "t")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Parse {
                line,
                message: format!("t = {t} outside [0, 1]"),
            });
        }
        let y = field(yi, "y")?;
        let sigma = match si {
            Some(idx) => {
                let s = field(idx, "sigma")?;
                if s <= 0.0 {
                    return Err(Error::Parse {
                        line,
                        message: format!("sigma must be > 0, got {s}"),
                    });
                }
                Some(s)
            }
            None => None,
        };
        rows.push((line, t, y, sigma));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    if let Some(w) = rows.windows(2).find(|w| w[0].1 == w[1].1) {
        return Err(Error::Parse {
            line: w[0].0.max(w[1].0),
            message: format!(
                "duplicate t = {} (also on line {})",
                w[1].1,
                w[0].0.min(w[1].0)
            ),
        });
    }
    let t = rows.iter().map(|r| r.1).collect();
    let y = rows.iter().map(|r| r.2).collect();
    let sigma = si.map(|_| {
        rows.iter()
            .map(|r| r.3.expect("sigma column present"))
            .collect()
    });
    Observations::new(t, y, sigma)
}

pub fn read_dataset(path: &Path) -> Result<Observations> {
    parse_dataset(fs::File::open(path)?)
}

/// Writes `t,y[,sigma]`; values round-trip exactly through [`parse_dataset`].
pub fn write_dataset(writer: impl Write, obs: &Observations) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    match obs.sigma() {
        Some(s) => {
            w.write_record(["t", "y", "sigma"])?;
            for ((t, y), s) in obs.t().iter().zip(obs.y()).zip(s) {
                w.write_record([t.to_string(), y.to_string(), s.to_string()])?;
            }
        }
        None => {
            w.write_record(["t", "y"])?;
            for (t, y) in obs.t().iter().zip(obs.y()) {
                w.write_record([t.to_string(), y.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Validated model settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub obs: Observations,
    pub spec: ProblemSpec,
    pub config: ChangePointConfig,
    pub cells: usize,
    pub opts: DualOptions,
}

impl RunConfig {
    pub fn from_args(args: &ModelArgs) -> Result<Self> {
        let params = SobolevParams::new(args.m, args.p)?;
        if !(args.lambda > 0.0 && args.lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda must be > 0, got {}",
                args.lambda
            )));
        }
        let ell = args.ell.unwrap_or(args.m);
        if ell == 0 || ell > args.m {
            return Err(Error::Invalid(format!(
                "ell must lie in 1..={}, got {ell}",
                args.m
            )));
        }
        if args.grid == 0 {
            return Err(Error::Invalid("grid must have at least one cell".into()));
        }
        if !(args.grad_tol > 0.0 && args.feas_tol > 0.0) {
            return Err(Error::Invalid("tolerances must be > 0".into()));
        }
        let orientation: Orientation = args.orientation.parse()?;
        let config = ChangePointConfig::new(ell, args.changepoints.clone(), orientation)?;
        let obs = read_dataset(&args.data)?;
        if obs.len() < args.m {
            return Err(Error::Invalid(format!(
                "need at least m = {} observations, got {}",
                args.m,
                obs.len()
            )));
        }
        let spec = match args.loss {
            LossKind::Quadratic => ProblemSpec::quadratic(params, args.lambda, &obs)?,
            LossKind::Huber => ProblemSpec::huber(params, args.lambda, args.huber_c, &obs)?,
        };
        Ok(Self {
            obs,
            spec,
            config,
            cells: args.grid,
            opts: DualOptions {
                max_iter: args.max_iter,
                grad_tol: args.grad_tol,
                feas_tol: args.feas_tol,
            },
        })
    }
}

fn output_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Invalid(
            "output grid needs at least two points".into(),
        ));
    }
    Ok((0..points)
        .map(|k| k as f64 / (points - 1) as f64)
        .collect())
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    gap: f64,
    kkt: KktReport,
    feasibility: f64,
    projected_gradient_norm: f64,
    moment_residual: f64,
    iterations: usize,
}

#[derive(Debug, Serialize)]
struct FitReport {
    m: usize,
    p: f64,
    lambda: f64,
    changepoints: Vec<f64>,
    orientation: String,
    a: Vec<f64>,
    alpha: Vec<f64>,
    grid: Vec<f64>,
    f: Vec<f64>,
    f_m: Vec<f64>,
    fitted: Vec<f64>,
    diagnostics: Diagnostics,
}

struct Fit {
    problem: DualProblem,
    solution: DualSolution,
    estimate: SplineEstimate,
}

fn fit_dual(rc: &RunConfig) -> Result<Fit> {
    let problem = DualProblem::new(&rc.obs, &rc.spec, &rc.config, rc.cells)?;
    let solution = problem.solve(&rc.opts)?;
    let estimate = recover(&problem, &solution)?;
    Ok(Fit {
        problem,
        solution,
        estimate,
    })
}

fn fit_report(rc: &RunConfig, fit: &Fit, grid: &[f64]) -> Result<FitReport> {
    let kkt = kkt_report(&fit.problem, &fit.solution.alpha, &fit.estimate);
    let f = grid
        .iter()
        .map(|&x| fit.estimate.evaluate(x))
        .collect::<Result<_>>()?;
    let f_m = grid
        .iter()
        .map(|&x| fit.estimate.deriv_at(x))
        .collect::<Result<_>>()?;
    Ok(FitReport {
        m: rc.spec.params.m(),
        p: rc.spec.params.p(),
        lambda: rc.spec.lambda,
        changepoints: rc.config.points().to_vec(),
        orientation: rc.config.orientation().to_string(),
        a: fit.estimate.a.clone(),
        alpha: fit.solution.alpha.clone(),
        grid: grid.to_vec(),
        f,
        f_m,
        fitted: fit.estimate.fitted.clone(),
        diagnostics: Diagnostics {
            gap: kkt.gap,
            kkt,
            feasibility: kkt.cone_margin,
            projected_gradient_norm: fit.solution.projected_gradient_norm,
            moment_residual: fit.solution.moment_residual,
            iterations: fit.solution.iterations,
        },
    })
}

/// Collects artifacts and writes them once the command has finished.
struct Artifacts {
    dir: Option<PathBuf>,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            files: Vec::new(),
        }
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes.clone()));
        Ok(bytes)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.files.push((name.to_string(), bytes.clone()));
        Ok(bytes)
    }

    fn flush(&self) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            for (name, bytes) in &self.files {
                fs::write(dir.join(name), bytes)?;
            }
        }
        Ok(())
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn run_fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::from_args(&args.model)?;
    let grid = output_grid(args.output.out_points)?;
    let mut art = Artifacts::new(args.output.out.clone());
    let fit = match fit_dual(&rc) {
        Ok(fit) => fit,
        Err(e) => {
            persist_failure(&mut art, &e)?;
            return Err(e);
        }
    };
    let report = fit_report(&rc, &fit, &grid)?;
    let json = art.json("fit.json", &report)?;
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            vec![
                grid[k].to_string(),
                report.f[k].to_string(),
                report.f_m[k].to_string(),
            ]
        })
        .collect();
    let csv = art.csv("fit.csv", &["t", "f", "f_m"], &rows)?;
    let obs_rows: Vec<Vec<String>> = (0..rc.obs.len())
        .map(|i| {
            let (y, fi) = (rc.obs.y()[i], report.fitted[i]);
            vec![
                rc.obs.t()[i].to_string(),
                y.to_string(),
                fi.to_string(),
                (y - fi).to_string(),
                report.alpha[i].to_string(),
            ]
        })
        .collect();
    art.csv(
        "fitted.csv",
        &["t", "y", "fitted", "residual", "alpha"],
        &obs_rows,
    )?;
    art.flush()?;
    out.write_all(if args.output.format == Format::Json {
        &json
    } else {
        &csv
    })?;
    Ok(())
}

/// Writes whatever the failed solve left behind, then lets the error through.
fn persist_failure(art: &mut Artifacts, err: &Error) -> Result<()> {
    if let Error::DualNotConverged {
        iterations,
        projected_gradient,
        best,
    } = err
    {
        art.json(
            "diagnostics.json",
            &json!({
                "error": err.to_string(),
                "iterations": iterations,
                "projected_gradient_norm": projected_gradient,
                "best": best,
            }),
        )?;
    } else if err.is_solver_failure() {
        art.json("diagnostics.json", &json!({ "error": err.to_string() }))?;
    }
    art.flush()
}

fn parse_orientations(s: &str) -> Result<Vec<Orientation>> {
    match s.trim() {
        "both" => Ok(Orientation::both().to_vec()),
        other => Ok(vec![other.parse()?]),
    }
}

fn run_search(args: &SearchArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::from_args(&args.model)?;
    if rc.config.ell() != rc.spec.params.m() {
        return Err(Error::Unsupported(
            "change-point search needs ell = m".into(),
        ));
    }
    let spec = SearchSpec {
        k: args.k,
        orientations: parse_orientations(&args.orientations)?,
        grid_points: args.grid_g,
        refine: args.refine,
        cells: rc.cells,
        opts: rc.opts,
    };
    let mut art = Artifacts::new(args.output.out.clone());
    let result = match changepoint::search(&rc.obs, &rc.spec, &spec) {
        Ok(r) => r,
        Err(e) => {
            persist_failure(&mut art, &e)?;
            return Err(e);
        }
    };
    let by_k = match args.k_max {
        Some(k_max) => Some(changepoint::best_by_k(&rc.obs, &rc.spec, &spec, k_max)?),
        None => None,
    };
    let summary: Option<Vec<_>> = by_k.as_ref().map(|v| {
        v.iter()
            .enumerate()
            .map(|(k, r)| json!({"K": k, "value": r.value, "points": r.points, "orientation": r.orientation}))
            .collect()
    });
    let json = art.json(
        "search.json",
        &json!({ "result": result, "best_by_k": summary }),
    )?;
    let mut table = result.table.clone();
    if args.k == 1 {
        table.sort_by(|a, b| {
            (a.orientation.sign(), a.points[0])
                .partial_cmp(&(b.orientation.sign(), b.points[0]))
                .expect("finite abscissae")
        });
    }
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|c| {
            let mut r: Vec<String> = c.points.iter().map(|x| x.to_string()).collect();
            r.push(c.orientation.to_string());
            r.push(opt_str(c.value));
            r
        })
        .collect();
    let mut header: Vec<String> = (1..=args.k).map(|k| format!("x{k}")).collect();
    if args.k == 1 {
        header[0] = "x".into();
    }
    header.push("orientation".into());
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = art.csv("profile.csv", &header, &rows)?;
    art.flush()?;
    out.write_all(if args.output.format == Format::Json {
        &json
    } else {
        &csv
    })?;
    Ok(())
}

fn run_halfwidth(args: &HalfwidthArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::from_args(&args.model)?;
    let grid = output_grid(args.output.out_points)?;
    let mut art = Artifacts::new(args.output.out.clone());
    let fit = match fit_dual(&rc) {
        Ok(fit) => fit,
        Err(e) => {
            persist_failure(&mut art, &e)?;
            return Err(e);
        }
    };
    let report = halfwidth::report(&fit.estimate, &rc.obs, rc.spec.lambda, &grid)?;
    let epsilon = match args.epsilon {
        Some(e) => e,
        None => {
            let (lo, hi) = rc
                .obs
                .y()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            let range = hi - lo;
            1e-3 * if range > 0.0 { range } else { 1.0 }
        }
    };
    let mut probes = Vec::new();
    for &j in &args.probe {
        let probe = halfwidth::influence_probe(
            &rc.obs, &rc.spec, &rc.config, rc.cells, &rc.opts, j, epsilon, &grid,
        )?;
        let rows: Vec<Vec<String>> = grid
            .iter()
            .zip(&probe.response)
            .map(|(x, r)| vec![x.to_string(), r.to_string()])
            .collect();
        art.csv(&format!("probe_{j}.csv"), &["t", "response"], &rows)?;
        probes.push(json!({
            "index": j,
            "t": rc.obs.t()[j],
            "epsilon": epsilon,
            "fwhm": probe.fwhm,
        }));
    }
    let json = art.json(
        "halfwidth.json",
        &json!({ "report": report, "probes": probes }),
    )?;
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            vec![
                grid[k].to_string(),
                opt_str(report.h_eff[k]),
                opt_str(report.h_mse[k]),
                report.density[k].to_string(),
            ]
        })
        .collect();
    let csv = art.csv("halfwidth.csv", &["t", "h_eff", "h_mse", "density"], &rows)?;
    art.flush()?;
    out.write_all(if args.output.format == Format::Json {
        &json
    } else {
        &csv
    })?;
    Ok(())
}

/// Dual and primal values of one instance with their gap.
#[derive(Debug, Serialize)]
pub struct OracleCheck {
    pub cells: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub violation: f64,
    pub newton_iterations: usize,
    pub max_f_difference: f64,
}

pub fn oracle_check(rc: &RunConfig, allow_any_p: bool) -> Result<(OracleCheck, OracleSolution)> {
    let fit = fit_dual(rc)?;
    let mut anchors = rc.obs.t().to_vec();
    anchors.extend_from_slice(rc.config.points());
    let cells = oracle::auto_cells(&anchors, rc.cells)?;
    let dp = DiscretePrimal::new(&rc.obs, &rc.spec, cells)?;
    let opts = OracleOptions {
        allow_any_p,
        ..OracleOptions::default()
    };
    let sol = oracle::solve_primal(&dp, &rc.config, &opts, None)?;
    let gap = sol.objective + fit.solution.objective;
    let mut diff: f64 = 0.0;
    for (&x, &fo) in sol.grid.iter().zip(&sol.f) {
        diff = diff.max((fit.estimate.evaluate(x)? - fo).abs());
    }
    Ok((
        OracleCheck {
            cells,
            primal: sol.objective,
            dual: fit.solution.objective,
            gap,
            relative_gap: gap / (1.0 + sol.objective.abs()),
            violation: sol.violation,
            newton_iterations: sol.newton_iterations,
            max_f_difference: diff,
        },
        sol,
    ))
}

fn run_oracle(args: &OracleArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::from_args(&args.model)?;
    let mut art = Artifacts::new(args.output.out.clone());
    let (check, sol) = match oracle_check(&rc, args.allow_any_p) {
        Ok(v) => v,
        Err(e) => {
            persist_failure(&mut art, &e)?;
            return Err(e);
        }
    };
    let json = art.json("oracle_check.json", &check)?;
    let rows: Vec<Vec<String>> = sol
        .grid
        .iter()
        .zip(&sol.f)
        .map(|(x, f)| vec![x.to_string(), f.to_string()])
        .collect();
    art.csv("oracle.csv", &["t", "f"], &rows)?;
    art.flush()?;
    match args.output.format {
        Format::Json => out.write_all(&json)?,
        Format::Csv => writeln!(
            out,
            "primal,dual,gap\n{},{},{}",
            check.primal, check.dual, check.gap
        )?,
    }
    writeln!(out, "duality gap: {:.3e}", check.gap)?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let shape = match args.shape {
        ShapeKind::AbsKink => Shape::AbsKink,
        ShapeKind::MonotoneSmooth => Shape::MonotoneSmooth,
        ShapeKind::ConvexQuad => Shape::ConvexQuad,
        ShapeKind::Custom => {
            if args.coefficients.is_empty() {
                return Err(Error::Invalid("custom shape needs --coefficients".into()));
            }
            Shape::Custom(args.coefficients.clone())
        }
    };
    let obs = simulate(&shape, args.n, args.noise_sd, args.seed)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_dataset(fs::File::create(dir.join("data.csv"))?, &obs)
        }
        None => write_dataset(out, &obs),
    }
}

/// Runs one command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a, out),
        Command::SearchChangepoints(a) => run_search(a, out),
        Command::DiagnoseHalfwidth(a) => run_halfwidth(a, out),
        Command::OracleCheck(a) => run_oracle(a, out),
        Command::Simulate(a) => run_simulate(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_solver_failure() {
                EXIT_SOLVER
            } else {
                EXIT_INVALID
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let o = parse_dataset("t,y\n0.1,1.0\n0.9,2.0".as_bytes()).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o.y(), &[1.0, 2.0]);

        let o = parse_dataset("t,y\n0.9,2.0\n0.1,1.0\n".as_bytes()).unwrap();
        assert_eq!(o.t(), &[0.1, 0.9]);
    }

    #[test]
    fn parse_rejections() {
        let line = |s: &str| match parse_dataset(s.as_bytes()) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert_eq!(line("t,y\n0.1,1\n0.5,2\n0.1,3\n"), 4);
        assert_eq!(line("t,y,sigma\n0.1,1,0.5\n0.2,1,0\n"), 3);
        assert_eq!(line("t,y\n0.1,1\n0.2,abc\n"), 3);
        assert_eq!(line("t,y\n1.5,1\n"), 2);
        assert_eq!(line("x,y\n0.5,1\n"), 1);
    }

    #[test]
    fn simulate_examples() {
        let o = simulate(&Shape::AbsKink, 3, 0.0, 1).unwrap();
        assert_eq!(o.t(), &[0.0, 0.5, 1.0]);
        assert_eq!(o.y(), &[0.5, 0.0, 0.5]);
        let a = simulate(&Shape::ConvexQuad, 20, 0.1, 7).unwrap();
        let b = simulate(&Shape::ConvexQuad, 20, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let m = simulate(&Shape::MonotoneSmooth, 50, 0.0, 0).unwrap();
        assert!(m.y().windows(2).all(|w| w[1] > w[0]));
        let c = simulate(&Shape::Custom(vec![1.0, 2.0, 3.0]), 2, 0.0, 0).unwrap();
        assert_eq!(c.y(), &[1.0, 6.0]);
        assert!(simulate(&Shape::AbsKink, 1, 0.0, 0).is_err());
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let o = simulate(&Shape::MonotoneSmooth, 37, 0.3, 11).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &o).unwrap();
        assert_eq!(parse_dataset(buf.as_slice()).unwrap(), o);
    }

    #[test]
    fn invalid_p_names_interval() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            [
                "shapespline",
                "fit",
                "--data",
                "/nonexistent.csv",
                "--p",
                "1.0",
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_INVALID);
        assert!(String::from_utf8(err).unwrap().contains("(1, ∞)"));
    }
}
