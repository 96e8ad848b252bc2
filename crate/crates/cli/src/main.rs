//! `fbm-sde`: command-line front end of the `fbm_sde` crate.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
//! 3 failed `--assert`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fbm_sde::coefficients::CoefficientSpec;
use fbm_sde::experiments::{
    run_as_limit_check, run_limit_law_test, run_mean_square_check, run_rate_experiment, run_variation_experiment,
    write_as_limit_outputs, write_limit_law_outputs, write_mean_square_outputs, write_rate_outputs,
    write_variation_outputs, ExperimentConfig, Statistic, VariationConfig,
};
use fbm_sde::flow::{solve_reference, FlowMap};
use fbm_sde::rng::{Purpose, SeedTag};
use fbm_sde::schemes::run_scheme;
use fbm_sde::{Error, FbmSampler, HurstParameter, SchemeKind};

#[derive(Parser, Debug)]
#[command(name = "fbm-sde", version, about = "SDEs driven by fractional Brownian motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample one fBm path and write it as `t,B`.
    Fbm(Flags),
    /// Run one scheme on one path against the reference solution.
    Solve(Flags),
    /// Fit the convergence rate over `n_list`.
    Rate(Flags),
    /// Per-path ratio of the normalized Euler error to its almost-sure limit.
    AsLimit(Flags),
    /// Two-sample KS test of the Crank–Nicholson limit law.
    LimitLaw(Flags),
    /// Power variations of fBm.
    Variations(Flags),
    /// Mean-square version of the Euler limit.
    MeanSquare(Flags),
    /// Print the `report.csv` of an output directory as JSON.
    Report(Flags),
}

/// Shared flags. Flags given on the command line override the `--config` file.
#[derive(Args, Debug, Clone, Default)]
struct Flags {
    #[arg(long)]
    h: Option<f64>,
    /// Grid size. For `rate`, the largest of seven successive powers of two.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// euler, modified_euler_linear or crank_nicholson.
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// linear, quadratic_sigma_sq or bounded_smooth.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    x0: Option<f64>,
    /// `γ` (linear, quadratic_sigma_sq) or `level` (bounded_smooth).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// `β` (linear, quadratic_sigma_sq) or `amplitude` (bounded_smooth).
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// `α` (quadratic_sigma_sq) or `drift` (bounded_smooth).
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Power of the variation.
    #[arg(long)]
    m: Option<u32>,
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (`fbm`, `solve`) or directory (experiments).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 when the statistical check fails.
    #[arg(long)]
    assert: bool,
    #[arg(long, env = "FBM_SDE_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Usage(String),
    Numerical(String),
    Assert(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Assert(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fbm(f) => fbm(&f),
        Command::Solve(f) => solve(&f),
        Command::Rate(f) => rate(&f),
        Command::AsLimit(f) => as_limit(&f),
        Command::LimitLaw(f) => limit_law(&f),
        Command::Variations(f) => variations(&f),
        Command::MeanSquare(f) => mean_square(&f),
        Command::Report(f) => report(&f),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn hurst(f: &Flags) -> CliResult<HurstParameter> {
    Ok(HurstParameter::new(f.h.ok_or_else(|| usage("--h is required"))?)?)
}

/// Opens `--out`, or stdout when absent.
fn output(f: &Flags) -> CliResult<Box<dyn Write>> {
    Ok(match &f.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn print_json(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    // a closed pipe (`| head`) is not an error
    let _ = writeln!(io::stdout().lock(), "{text}");
}

/// Coefficients from `--kind` and the numeric flags, or `base` with those flags applied.
fn coefficient_spec(f: &Flags, base: Option<CoefficientSpec>) -> CliResult<CoefficientSpec> {
    let base = match (f.kind.as_deref(), base) {
        (Some("linear"), _) => CoefficientSpec::Linear { gamma: 1.0, beta: 0.0 },
        (Some("quadratic_sigma_sq"), _) => CoefficientSpec::QuadraticSigmaSq { alpha: 1.0, beta: 0.0, gamma: 0.0, sign: 1.0 },
        (Some("bounded_smooth"), _) => CoefficientSpec::BoundedSmooth { level: 1.0, amplitude: 0.5, drift: 0.0 },
        (Some(other), _) => return Err(usage(format!("unknown kind '{other}'"))),
        (None, Some(spec)) => spec,
        (None, None) => return Err(usage("--kind or --config is required")),
    };
    Ok(match base {
        CoefficientSpec::Linear { gamma, beta } => {
            if f.alpha.is_some() {
                return Err(usage("--alpha does not apply to the linear kind"));
            }
            CoefficientSpec::Linear { gamma: f.gamma.unwrap_or(gamma), beta: f.beta.unwrap_or(beta) }
        }
        CoefficientSpec::QuadraticSigmaSq { alpha, beta, gamma, sign } => CoefficientSpec::QuadraticSigmaSq {
            alpha: f.alpha.unwrap_or(alpha),
            beta: f.beta.unwrap_or(beta),
            gamma: f.gamma.unwrap_or(gamma),
            sign,
        },
        CoefficientSpec::BoundedSmooth { level, amplitude, drift } => CoefficientSpec::BoundedSmooth {
            level: f.gamma.unwrap_or(level),
            amplitude: f.beta.unwrap_or(amplitude),
            drift: f.alpha.unwrap_or(drift),
        },
    })
}

/// `[n]`, or the seven powers of two ending at `n` when `ladder` is set.
fn n_list(n: usize, ladder: bool) -> Vec<usize> {
    if !ladder {
        return vec![n];
    }
    (0..7).rev().map(|k| n >> k).filter(|&m| m >= 2).collect()
}

/// The experiment configuration of `--config` with the command-line flags applied.
fn experiment_config(f: &Flags, default_scheme: Option<SchemeKind>, ladder: bool) -> CliResult<ExperimentConfig> {
    let mut value: Value = match &f.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| usage("config must be a JSON object"))?;
    if let Some(h) = f.h {
        obj.insert("h".into(), json!(h));
    }
    if let Some(seed) = f.seed {
        obj.insert("master_seed".into(), json!(seed));
    }
    if let Some(paths) = f.paths {
        obj.insert("n_paths".into(), json!(paths));
    }
    if let Some(x0) = f.x0 {
        obj.insert("x0".into(), json!(x0));
    }
    if let Some(threads) = f.threads {
        obj.insert("threads".into(), json!(threads));
    }
    if let Some(n) = f.n {
        obj.insert("n_list".into(), json!(n_list(n, ladder)));
    }
    match f.scheme.or(default_scheme) {
        Some(s) if f.scheme.is_some() || !obj.contains_key("scheme") => {
            obj.insert("scheme".into(), serde_json::to_value(s).expect("scheme serializes"));
        }
        _ => {}
    }
    let base = match obj.get("coefficients") {
        Some(c) => Some(serde_json::from_value(c.clone()).map_err(|e| usage(format!("coefficients: {e}")))?),
        None => None,
    };
    if f.kind.is_some() || f.gamma.is_some() || f.beta.is_some() || f.alpha.is_some() || base.is_none() {
        let spec = coefficient_spec(f, base)?;
        obj.insert("coefficients".into(), serde_json::to_value(spec).expect("spec serializes"));
    }
    serde_json::from_value(value).map_err(|e| usage(format!("configuration: {e}")))
}

fn fbm(f: &Flags) -> CliResult<()> {
    let h = hurst(f)?;
    let n = f.n.ok_or_else(|| usage("--n is required"))?;
    let sampler = FbmSampler::equidistant(h, n)?;
    let path = sampler.sample_tagged(SeedTag::new(f.seed.unwrap_or(0), Purpose::Auxiliary, 0));
    let mut out = output(f)?;
    path.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn solve(f: &Flags) -> CliResult<()> {
    let h = hurst(f)?;
    let n = f.n.ok_or_else(|| usage("--n is required"))?;
    let scheme = f.scheme.unwrap_or(SchemeKind::Euler);
    let coeffs = fbm_sde::Coefficients::from_spec(&coefficient_spec(f, None)?)?;
    let x0 = f.x0.unwrap_or(1.0);
    let sampler = FbmSampler::equidistant(h, n)?;
    let path = sampler.sample_tagged(SeedTag::new(f.seed.unwrap_or(0), Purpose::Auxiliary, 0));
    let result = run_scheme(scheme, &coeffs, &path, x0)?;
    let reference = solve_reference(&FlowMap::new(coeffs), &path, x0, fbm_sde::flow::DEFAULT_REFINEMENT)?;
    let mut out = output(f)?;
    result.write_csv(&mut out, Some(reference.x_values()))?;
    out.flush()?;
    Ok(())
}

fn write_outputs(f: &Flags, write: impl FnOnce(&Path) -> fbm_sde::Result<()>) -> CliResult<()> {
    if let Some(dir) = &f.out {
        write(dir)?;
    }
    Ok(())
}

fn rate(f: &Flags) -> CliResult<()> {
    let cfg = experiment_config(f, Some(SchemeKind::Euler), true)?;
    let report = run_rate_experiment(&cfg)?;
    write_outputs(f, |dir| write_rate_outputs(dir, &cfg, &report))?;
    print_json(&json!({
        "scheme": report.scheme.name(),
        "statistic": report.statistic.name(),
        "rows": report.rows,
        "slope": report.slope,
        "slope_half_width": report.slope_half_width,
        "rate": report.rate,
        "theoretical_exponent": report.theoretical_exponent,
        "paths_used": report.paths_used,
        "paths_failed": report.paths_failed,
    }));
    if f.assert {
        let band = cfg.rate_band.ok_or_else(|| usage("--assert needs rate_band in the configuration"))?;
        if !report.rate_within(band) {
            return Err(Failure::Assert(format!("rate {:.4} outside [{}, {}]", report.rate, band[0], band[1])));
        }
    }
    Ok(())
}

fn as_limit(f: &Flags) -> CliResult<()> {
    let cfg = experiment_config(f, Some(SchemeKind::Euler), false)?;
    let report = run_as_limit_check(&cfg)?;
    write_outputs(f, |dir| write_as_limit_outputs(dir, &cfg, &report))?;
    print_json(&json!({
        "n": report.n,
        "statistic": report.statistic.name(),
        "median_ratio": report.median_ratio,
        "median_abs_ratio_deviation": report.median_abs_ratio_deviation,
        "skipped": report.skipped,
        "paths_failed": report.paths_failed,
        "degenerate": report.degenerate,
    }));
    if f.assert {
        let tol = cfg.ratio_tolerance.ok_or_else(|| usage("--assert needs ratio_tolerance in the configuration"))?;
        let ok = match cfg.statistic {
            Statistic::SupNorm => (report.median_ratio - 1.0).abs() <= tol,
            _ => report.median_abs_ratio_deviation < tol,
        };
        if !ok {
            return Err(Failure::Assert(format!(
                "median ratio {:.4}, median |ratio - 1| {:.4}, tolerance {tol}",
                report.median_ratio, report.median_abs_ratio_deviation
            )));
        }
    }
    Ok(())
}

fn limit_law(f: &Flags) -> CliResult<()> {
    let cfg = experiment_config(f, Some(SchemeKind::CrankNicholson), false)?;
    let report = run_limit_law_test(&cfg)?;
    write_outputs(f, |dir| write_limit_law_outputs(dir, &cfg, &report))?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    if f.assert {
        let threshold = cfg.p_threshold.unwrap_or(0.01);
        if !report.passes(threshold) {
            return Err(Failure::Assert(format!(
                "KS p-value {:?} (one-sample {:?}) not above {threshold}",
                report.p_value,
                report.one_sample.as_ref().map(|k| k.p_value)
            )));
        }
    }
    Ok(())
}

fn variations(f: &Flags) -> CliResult<()> {
    let mut value: Value = match &f.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| usage("config must be a JSON object"))?;
    let overrides = [
        ("h", f.h.map(|v| json!(v))),
        ("n", f.n.map(|v| json!(v))),
        ("n_paths", f.paths.map(|v| json!(v))),
        ("master_seed", f.seed.map(|v| json!(v))),
        ("m", f.m.map(|v| json!(v))),
        ("threads", f.threads.map(|v| json!(v))),
    ];
    for (key, v) in overrides {
        if let Some(v) = v {
            obj.insert(key.into(), v);
        }
    }
    let cfg: VariationConfig = serde_json::from_value(value).map_err(|e| usage(format!("configuration: {e}")))?;
    let report = run_variation_experiment(&cfg)?;
    write_outputs(f, |dir| write_variation_outputs(dir, &report))?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    if f.assert && !report.mean_within(3.0) {
        return Err(Failure::Assert(format!(
            "mean {:.6} ± {:.6} not within 3 SE of {}",
            report.mean, report.mean_se, report.expected_mean
        )));
    }
    Ok(())
}

fn mean_square(f: &Flags) -> CliResult<()> {
    let cfg = experiment_config(f, Some(SchemeKind::Euler), false)?;
    let report = run_mean_square_check(&cfg)?;
    write_outputs(f, |dir| write_mean_square_outputs(dir, &cfg, &report))?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    if f.assert {
        let tol = cfg.gap_tolerance.ok_or_else(|| usage("--assert needs gap_tolerance in the configuration"))?;
        if !report.relative_gap.is_some_and(|g| g.abs() < tol) {
            return Err(Failure::Assert(format!("relative gap {:?}, tolerance {tol}", report.relative_gap)));
        }
    }
    Ok(())
}

fn report(f: &Flags) -> CliResult<()> {
    let dir = f.out.as_ref().ok_or_else(|| usage("--out must name an output directory"))?;
    let text = fs::read_to_string(dir.join("report.csv"))?;
    let mut lines = text.lines();
    if lines.next() != Some("key,value") {
        return Err(usage(format!("{}: not a report file", dir.join("report.csv").display())));
    }
    let mut map = serde_json::Map::new();
    for line in lines {
        let (key, value) = line.split_once(',').ok_or_else(|| usage(format!("malformed line '{line}'")))?;
        let entry = if let Ok(i) = value.parse::<i64>() {
            json!(i)
        } else if let Some(x) = value.parse::<f64>().ok().filter(|x| x.is_finite()) {
            json!(x)
        } else {
            json!(value)
        };
        match map.get_mut(key) {
            Some(Value::Array(items)) => items.push(entry),
            Some(existing) => {
                let first = existing.take();
                *existing = json!([first, entry]);
            }
            None => {
                map.insert(key.to_string(), entry);
            }
        }
    }
    print_json(&Value::Object(map));
    Ok(())
}
