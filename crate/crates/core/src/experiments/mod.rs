//! Coupled Monte Carlo experiments.
//!
//! Path `i` is always drawn from the stream `(master_seed, FbmPath, i)` at the
//! finest grid size and restricted to the coarser ones, so every scheme run and
//! its reference share the same noise. Work items run on a rayon pool and are
//! collected in path order, which makes all outputs independent of the thread
//! count.

mod config;
mod limit_law;
mod report;
mod variation;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, Statistic};
pub use limit_law::{calibrate_sigma_h, run_limit_law_test, CalibrationCandidate, CalibrationReport, LimitLawReport};
pub use report::{
    write_as_limit_outputs, write_limit_law_outputs, write_mean_square_outputs, write_rate_outputs,
    write_variation_outputs,
};
pub use variation::{run_variation_experiment, VariationConfig, VariationReport};

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, FbmSampler};
use crate::flow::{solve_reference, FlowMap, ReferenceSolution};
use crate::malliavin::{euler_limit_functional, euler_limit_sup};
use crate::rng::{Purpose, SeedTag};
use crate::schemes::{run_scheme, SchemeKind};
use crate::stats::{linear_fit, median, quantile};

/// Runs `f` on a dedicated pool with `threads` workers (rayon's default when `None`).
pub fn with_pool<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Maps `f` over `0..count` in parallel, returning results in index order.
pub(crate) fn par_map<T, F>(threads: Option<usize>, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    with_pool(threads, || (0..count).into_par_iter().map(&f).collect())
}

/// Error of one scheme run against its coupled reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSample {
    pub path_index: usize,
    pub n: usize,
    pub raw_error: f64,
    /// `raw_error · n^r` with `r` the normalization exponent.
    pub normalized_error: f64,
    /// Per-path theoretical limit of `normalized_error`, where defined.
    pub limit_value: Option<f64>,
}

/// Per-n summary of `|raw_error|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub scheme: SchemeKind,
    pub statistic: Statistic,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log₂` error against `log₂ n`.
    pub slope: f64,
    /// 95% half-width of the slope.
    pub slope_half_width: f64,
    /// `-slope`, the empirical convergence rate.
    pub rate: f64,
    pub theoretical_exponent: f64,
    pub paths_used: usize,
    pub paths_failed: usize,
    pub samples: Vec<ErrorSample>,
}

impl RateReport {
    /// Whether `rate` lies in `[lo, hi]`.
    pub fn rate_within(&self, band: [f64; 2]) -> bool {
        self.rate >= band[0] && self.rate <= band[1]
    }
}

/// Shared state for the coupled runs of one configuration.
struct Setup {
    cfg: ExperimentConfig,
    coeffs: Coefficients,
    flow: FlowMap,
    sampler: FbmSampler,
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let coeffs = cfg.build_coefficients()?;
        Ok(Self {
            cfg: cfg.clone(),
            flow: FlowMap::new(coeffs.clone()),
            coeffs,
            sampler: FbmSampler::equidistant(cfg.h, cfg.n_max())?,
        })
    }

    fn fine_path(&self, index: usize) -> FbmPath {
        self.sampler.sample_tagged(SeedTag::new(self.cfg.master_seed, Purpose::FbmPath, index as u64))
    }

    /// Raw errors for every `n` in `n_list`, the limit value if requested, and `X₁`.
    fn run_path(&self, index: usize, with_limit: bool) -> Result<PathRun> {
        let fine = self.fine_path(index);
        let reference = solve_reference(&self.flow, &fine, self.cfg.x0, self.cfg.refinement)?;
        let n_max = self.cfg.n_max();
        let mut raw = Vec::with_capacity(self.cfg.n_list.len());
        for &n in &self.cfg.n_list {
            let path = fine.restrict(n)?;
            let scheme = run_scheme(self.cfg.scheme, &self.coeffs, &path, self.cfg.x0)?;
            let stride = n_max / n;
            let x = reference.x_values();
            let err = match self.cfg.statistic {
                Statistic::PointwiseT1 | Statistic::MeanSquare => scheme.terminal() - reference.terminal(),
                Statistic::SupNorm => scheme
                    .values
                    .iter()
                    .enumerate()
                    .fold(0.0f64, |m, (k, v)| m.max((v - x[k * stride]).abs())),
            };
            if !err.is_finite() {
                return Err(Error::Domain(format!("non-finite error on path {index} at n = {n}")));
            }
            raw.push(err);
        }
        let limit = if with_limit { self.limit_value(&reference)? } else { None };
        let inf_sigma = reference.x_values().iter().fold(f64::INFINITY, |m, &x| m.min(self.coeffs.sigma(x).abs()));
        Ok(PathRun { raw, limit, x1: reference.terminal(), inf_sigma })
    }

    fn limit_value(&self, reference: &ReferenceSolution) -> Result<Option<f64>> {
        let h = self.cfg.h.value();
        Ok(match (self.cfg.scheme, self.cfg.statistic) {
            (SchemeKind::Euler, Statistic::SupNorm) => Some(euler_limit_sup(reference, &self.coeffs)),
            (SchemeKind::Euler, _) => Some(euler_limit_functional(reference, &self.coeffs, reference.n())?),
            (SchemeKind::ModifiedEulerLinear, Statistic::SupNorm) => None,
            (SchemeKind::ModifiedEulerLinear, _) => match *self.coeffs.kind() {
                crate::CoefficientKind::Linear { gamma, .. } => {
                    Some(-0.25 * gamma * gamma * (4.0 - 2f64.powf(2.0 * h)) * reference.terminal())
                }
                _ => None,
            },
            (SchemeKind::CrankNicholson, _) => None,
        })
    }

    /// Runs every path, dropping those with numerical failures.
    fn run_all(&self, with_limit: bool) -> Result<(Vec<(usize, PathRun)>, usize)> {
        let results = par_map(self.cfg.threads, self.cfg.n_paths, |i| self.run_path(i, with_limit))?;
        collect_runs(results)
    }
}

struct PathRun {
    raw: Vec<f64>,
    limit: Option<f64>,
    x1: f64,
    /// Smallest `|σ(X_t)|` on the reference grid.
    inf_sigma: f64,
}

/// Keeps successful runs; more than 1% numerical failures is an error, and any
/// non-numerical error is returned as is.
fn collect_runs<T>(results: Vec<Result<T>>) -> Result<(Vec<(usize, T)>, usize)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((i, v)),
            Err(e) if e.is_numerical() || matches!(e, Error::Domain(_)) => {
                failed += 1;
                log::debug!("path {i} dropped: {e}");
                first.get_or_insert_with(|| format!("path {i}: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    if failed * 100 > total {
        return Err(Error::TooManyFailures { failed, total, first: first.unwrap_or_default() });
    }
    if failed > 0 {
        log::warn!("{failed} of {total} paths dropped ({})", first.unwrap_or_default());
    }
    Ok((ok, failed))
}

/// Coupled convergence-rate experiment: per-n quantiles of `|error|` and a
/// least-squares fit of `log₂` median error (root mean square for the
/// `mean_square` statistic) against `log₂ n`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<RateReport> {
    let setup = Setup::new(cfg)?;
    let (runs, failed) = setup.run_all(false)?;
    let r = cfg.normalization_exponent();
    let mut samples = Vec::with_capacity(runs.len() * cfg.n_list.len());
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for (j, &n) in cfg.n_list.iter().enumerate() {
        let abs: Vec<f64> = runs.iter().map(|(_, run)| run.raw[j].abs()).collect();
        let rms = (abs.iter().map(|e| e * e).sum::<f64>() / abs.len() as f64).sqrt();
        rows.push(RateRow { n, median: median(&abs), q1: quantile(&abs, 0.25), q3: quantile(&abs, 0.75), rms });
        for (i, run) in &runs {
            samples.push(ErrorSample {
                path_index: *i,
                n,
                raw_error: run.raw[j],
                normalized_error: run.raw[j] * (n as f64).powf(r),
                limit_value: None,
            });
        }
    }
    let xs: Vec<f64> = rows.iter().map(|row| (row.n as f64).log2()).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|row| if cfg.statistic == Statistic::MeanSquare { row.rms } else { row.median }.log2())
        .collect();
    let (slope, slope_half_width) = if rows.len() >= 2 {
        let fit = linear_fit(&xs, &ys);
        (fit.slope, fit.slope_half_width)
    } else {
        (f64::NAN, f64::INFINITY)
    };
    Ok(RateReport {
        scheme: cfg.scheme,
        statistic: cfg.statistic,
        rows,
        slope,
        slope_half_width,
        rate: -slope,
        theoretical_exponent: cfg.scheme.rate_exponent(cfg.h.value()),
        paths_used: runs.len(),
        paths_failed: failed,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsLimitRow {
    pub path_index: usize,
    pub normalized_error: f64,
    pub limit_value: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsLimitReport {
    pub n: usize,
    pub statistic: Statistic,
    pub rows: Vec<AsLimitRow>,
    /// Paths skipped because `|limit_value| < 10⁻⁸`.
    pub skipped: usize,
    pub paths_failed: usize,
    pub median_ratio: f64,
    pub median_abs_ratio_deviation: f64,
    /// Set when every raw error is at rounding level (the scheme is exact).
    pub degenerate: Option<String>,
}

const LIMIT_FLOOR: f64 = 1e-8;

/// Per-path ratio of the normalized error at the largest `n` to its almost-sure
/// limit (Euler or modified Euler only).
pub fn run_as_limit_check(cfg: &ExperimentConfig) -> Result<AsLimitReport> {
    if cfg.scheme == SchemeKind::CrankNicholson {
        return Err(Error::Config("as-limit applies to euler and modified_euler_linear".into()));
    }
    if cfg.scheme == SchemeKind::ModifiedEulerLinear && cfg.statistic == Statistic::SupNorm {
        return Err(Error::Config("no sup-norm limit is available for modified_euler_linear".into()));
    }
    let setup = Setup::new(cfg)?;
    let (runs, failed) = setup.run_all(true)?;
    let n = cfg.n_max();
    let last = cfg.n_list.len() - 1;
    let scale = (n as f64).powf(cfg.normalization_exponent());
    let exact = runs
        .iter()
        .all(|(_, run)| run.raw[last].abs() <= 1e3 * f64::EPSILON * run.x1.abs().max(1.0));
    let degenerate = (exact || setup.coeffs.sigma_is_constant()).then(|| "degenerate: scheme exact".to_string());
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (i, run) in &runs {
        let limit = run.limit.expect("limit requested");
        if limit.abs() < LIMIT_FLOOR {
            skipped += 1;
            continue;
        }
        let normalized = run.raw[last] * scale;
        rows.push(AsLimitRow { path_index: *i, normalized_error: normalized, limit_value: limit, ratio: normalized / limit });
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let devs: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    let (median_ratio, median_abs_ratio_deviation) =
        if ratios.is_empty() { (f64::NAN, f64::NAN) } else { (median(&ratios), median(&devs)) };
    Ok(AsLimitReport {
        n,
        statistic: cfg.statistic,
        rows,
        skipped,
        paths_failed: failed,
        median_ratio,
        median_abs_ratio_deviation,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanSquareReport {
    pub n: usize,
    /// `n^{2H-1}·(mean squared error)^{1/2}`.
    pub lhs: f64,
    /// `½·(mean |∫σ'(X_s)D_sX₁ds|²)^{1/2}`.
    pub rhs: f64,
    /// `lhs/rhs - 1`; `None` when both sides vanish.
    pub relative_gap: Option<f64>,
    pub paths_used: usize,
    pub paths_failed: usize,
    pub warnings: Vec<String>,
}

/// Mean-square version of the Euler limit at the largest `n`.
pub fn run_mean_square_check(cfg: &ExperimentConfig) -> Result<MeanSquareReport> {
    if cfg.scheme != SchemeKind::Euler {
        return Err(Error::Config("mean-square check applies to the euler scheme".into()));
    }
    let mut cfg = cfg.clone();
    cfg.statistic = Statistic::MeanSquare;
    cfg.n_list = vec![cfg.n_max()];
    let setup = Setup::new(&cfg)?;
    let mut warnings = Vec::new();
    if !setup.coeffs.is_bounded() {
        warnings.push("sigma or b is unbounded; the mean-square limit is not covered by the hypotheses".to_string());
    }
    let results = par_map(cfg.threads, cfg.n_paths, |i| {
        setup.run_path(i, true).map(|run| (run.raw[0], run.limit.expect("limit requested"), run.inf_sigma))
    })?;
    let (runs, failed) = collect_runs(results)?;
    let inf_sigma = runs.iter().fold(f64::INFINITY, |m, (_, r)| m.min(r.2));
    if inf_sigma < 1e-3 {
        warnings.push(format!("inf |sigma| over sampled paths is {inf_sigma:e}, not bounded away from 0"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let n = cfg.n_max();
    let count = runs.len() as f64;
    let mse = runs.iter().map(|(_, r)| r.0 * r.0).sum::<f64>() / count;
    let lhs = (n as f64).powf(2.0 * cfg.h.value() - 1.0) * mse.sqrt();
    // the functional already carries the factor -1/2
    let rhs = (runs.iter().map(|(_, r)| r.1 * r.1).sum::<f64>() / count).sqrt();
    let relative_gap = (rhs > 0.0).then(|| lhs / rhs - 1.0);
    Ok(MeanSquareReport { n, lhs, rhs, relative_gap, paths_used: runs.len(), paths_failed: failed, warnings })
}
