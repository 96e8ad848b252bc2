//! Calibration of `σ_H` and the mixed-Gaussian limit law of the Crank–Nicholson error.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{collect_runs, par_map, ExperimentConfig, Statistic};
use crate::error::{Error, Result};
use crate::fbm::{DaviesHarte, FbmSampler, HurstParameter};
use crate::flow::FlowMap;
use crate::rng::{stream, Purpose, SeedTag};
use crate::schemes::{crank_nicholson_path, SchemeKind};
use crate::stats::{ks_one_sample, ks_two_sample, standard_normal_cdf, variance_and_se, KsResult};
use crate::variations::{sigma_h_squared, SigmaMode};

/// Grid of the independent Brownian path in the functional limit.
const BROWNIAN_GRID: usize = 1024;
/// Agreement threshold of the calibration, in standard errors.
const CALIBRATION_Z: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationCandidate {
    pub mode: SigmaMode,
    /// `None` where the closed form is undefined for this `H`.
    pub value: Option<f64>,
    /// `(empirical - value) / se`.
    pub z_raw: Option<f64>,
    /// `(empirical - value - 9n^{2H-1}) / se`, removing the first-chaos part of
    /// the finite-n variance.
    pub z: Option<f64>,
    pub agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub h: f64,
    pub n: usize,
    pub n_paths: usize,
    /// Sample variance of `n^{3H-1/2}Σ(ΔB)³`.
    pub empirical_variance: f64,
    pub standard_error: f64,
    /// `9n^{2H-1}`, the variance contributed by `3n^{H-1/2}B₁`.
    pub first_chaos_bias: f64,
    pub candidates: Vec<CalibrationCandidate>,
    /// The unique mode within three standard errors, if any.
    pub chosen: Option<SigmaMode>,
}

impl CalibrationReport {
    pub fn chosen_mode(&self) -> Result<SigmaMode> {
        self.chosen.ok_or_else(|| {
            let agreeing: Vec<&str> =
                self.candidates.iter().filter(|c| c.agrees).map(|c| c.mode.name()).collect();
            Error::CalibrationInconclusive(format!(
                "empirical variance {:.4} ± {:.4}; modes within {CALIBRATION_Z} SE: {:?}",
                self.empirical_variance, self.standard_error, agreeing
            ))
        })
    }
}

/// Compares the empirical variance of `n^{3H-1/2}Σ(ΔB)³` with each closed form of `σ_H²`.
pub fn calibrate_sigma_h(
    h: HurstParameter,
    n: usize,
    n_paths: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<CalibrationReport> {
    if n_paths < 2 {
        return Err(Error::Config("calibration needs at least 2 paths".into()));
    }
    let hv = h.value();
    let sampler = DaviesHarte::new(h, n)?;
    let scale = (n as f64).powf(3.0 * hv - 0.5);
    let values = par_map(threads, n_paths, |i| {
        let incs = sampler.sample_increments(&mut stream(master_seed, Purpose::Calibration, i as u64));
        incs.iter().map(|d| d * d * d).sum::<f64>() * scale
    })?;
    let (empirical_variance, standard_error) = variance_and_se(&values);
    let first_chaos_bias = 9.0 * (n as f64).powf(2.0 * hv - 1.0);
    let candidates: Vec<CalibrationCandidate> = SigmaMode::ALL
        .iter()
        .map(|&mode| {
            let value = sigma_h_squared(hv, mode).ok().map(|s| s.value);
            let z_raw = value.map(|v| (empirical_variance - v) / standard_error);
            let z = value.map(|v| (empirical_variance - v - first_chaos_bias) / standard_error);
            CalibrationCandidate { mode, value, z_raw, z, agrees: z.is_some_and(|z| z.abs() <= CALIBRATION_Z) }
        })
        .collect();
    let agreeing: Vec<SigmaMode> = candidates.iter().filter(|c| c.agrees).map(|c| c.mode).collect();
    let chosen = (agreeing.len() == 1).then(|| agreeing[0]);
    Ok(CalibrationReport {
        h: hv,
        n,
        n_paths,
        empirical_variance,
        standard_error,
        first_chaos_bias,
        candidates,
        chosen,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitLawReport {
    pub ks_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub sigma_h_mode: String,
    pub sigma_h_squared: f64,
    /// `sup_t` version of the test.
    pub functional: bool,
    /// KS of `A / (σ_H(α/12)σ(X₁))` against `N(0,1)` (pointwise version only).
    pub one_sample: Option<KsResult>,
    /// `α = 0`: the limit vanishes and only `max |A|` is reported.
    pub degenerate: bool,
    pub max_abs_a: f64,
    pub paths_failed: usize,
    pub calibration: Option<CalibrationReport>,
    pub n: usize,
    /// Sample `A`, in path order.
    #[serde(skip)]
    pub sample_a: Vec<f64>,
    /// Sample `B`, in path order.
    #[serde(skip)]
    pub sample_b: Vec<f64>,
}

impl LimitLawReport {
    /// Whether both KS p-values exceed `threshold`; for the degenerate case,
    /// whether `max |A|` is at rounding level.
    pub fn passes(&self, threshold: f64) -> bool {
        if self.degenerate {
            return self.max_abs_a < 1e-8;
        }
        self.p_value.is_some_and(|p| p > threshold)
            && self.one_sample.as_ref().is_none_or(|k| k.p_value > threshold)
    }
}

/// Two-sample KS test of `A = n^{3H-1/2}(X̂ⁿ₁ - X₁)` against
/// `σ_H(α/12)σ(φ(x₀, B₁))G` with fresh `B₁` and `G`, at the largest `n` of the
/// configuration. With the `sup_norm` statistic, compares `n^{3H-1/2}max_k|X̂ⁿ - X|`
/// with `σ_H(α/12)·sup_t|σ(X_t)W_t|`, `W` an independent Brownian motion.
pub fn run_limit_law_test(cfg: &ExperimentConfig) -> Result<LimitLawReport> {
    cfg.validate()?;
    if cfg.scheme != SchemeKind::CrankNicholson {
        return Err(Error::Config("the limit-law test uses the crank_nicholson scheme".into()));
    }
    let coeffs = cfg.build_coefficients()?;
    let (alpha, _, _) = coeffs
        .sigma_squared_quadratic()
        .ok_or_else(|| Error::Config("the limit-law test needs sigma^2 quadratic".into()))?;
    let h = cfg.h.value();
    let n = cfg.n_max();
    let functional = cfg.statistic == Statistic::SupNorm;

    let (mode, calibration) = match cfg.sigma_mode {
        Some(m) => (m, None),
        None => {
            let report = calibrate_sigma_h(
                cfg.h,
                cfg.calibration_n,
                cfg.calibration_paths,
                cfg.calibration_seed.unwrap_or(cfg.master_seed),
                cfg.threads,
            )?;
            log::info!(
                "sigma_H calibration: empirical {:.4} ± {:.4}, chosen {:?}",
                report.empirical_variance,
                report.standard_error,
                report.chosen
            );
            (report.chosen_mode()?, Some(report))
        }
    };
    let sigma_h_sq = sigma_h_squared(h, mode)?.value;
    let constant = sigma_h_sq.sqrt() * alpha / 12.0;

    let flow = FlowMap::new(coeffs.clone());
    let sampler = FbmSampler::equidistant(cfg.h, n)?;
    let scale = (n as f64).powf(3.0 * h - 0.5);
    let results = par_map(cfg.threads, cfg.n_paths, |i| -> Result<(f64, f64)> {
        let path = sampler.sample_tagged(SeedTag::new(cfg.master_seed, Purpose::FbmPath, i as u64));
        let scheme = crank_nicholson_path(&coeffs, &path, cfg.x0)?;
        if functional {
            let exact = flow.phi_sweep(cfg.x0, path.values())?;
            let sup = scheme
                .values
                .iter()
                .zip(&exact)
                .fold(0.0f64, |m, (x, (y, _))| m.max((x - y).abs()));
            Ok((scale * sup, f64::NAN))
        } else {
            let x1 = flow.phi(cfg.x0, path.terminal())?;
            Ok((scale * (scheme.terminal() - x1), coeffs.sigma(x1)))
        }
    })?;
    let (runs, failed) = collect_runs(results)?;
    let sample_a: Vec<f64> = runs.iter().map(|(_, r)| r.0).collect();
    let max_abs_a = sample_a.iter().fold(0.0f64, |m, a| m.max(a.abs()));

    let base = LimitLawReport {
        ks_stat: None,
        p_value: None,
        n_a: sample_a.len(),
        n_b: 0,
        sigma_h_mode: mode.name().to_string(),
        sigma_h_squared: sigma_h_sq,
        functional,
        one_sample: None,
        degenerate: alpha == 0.0,
        max_abs_a,
        paths_failed: failed,
        calibration,
        n,
        sample_a,
        sample_b: Vec::new(),
    };
    if alpha == 0.0 {
        return Ok(base);
    }

    let brownian = DaviesHarte::new(HurstParameter::new(0.5)?, BROWNIAN_GRID)?;
    let fbm_fresh = FbmSampler::equidistant(cfg.h, BROWNIAN_GRID)?;
    let sample_b = par_map(cfg.threads, cfg.n_paths, |i| -> Result<f64> {
        let mut reference = stream(cfg.master_seed, Purpose::LimitReference, i as u64);
        let mut noise = stream(cfg.master_seed, Purpose::LimitNoise, i as u64);
        if functional {
            let b = fbm_fresh.sample(&mut reference);
            let w = brownian.sample(&mut noise);
            let x = flow.phi_sweep(cfg.x0, b.values())?;
            let sup = x
                .iter()
                .zip(w.values())
                .fold(0.0f64, |m, ((xt, _), wt)| m.max((coeffs.sigma(*xt) * wt).abs()));
            Ok(constant * sup)
        } else {
            let b1: f64 = reference.sample(StandardNormal);
            let g: f64 = noise.sample(StandardNormal);
            Ok(constant * coeffs.sigma(flow.phi(cfg.x0, b1)?) * g)
        }
    })?
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let two = ks_two_sample(&base.sample_a, &sample_b);
    let one_sample = (!functional).then(|| {
        let standardized: Vec<f64> = runs.iter().map(|(_, (a, s))| a / (constant * s)).collect();
        ks_one_sample(&standardized, standard_normal_cdf)
    });
    Ok(LimitLawReport {
        ks_stat: Some(two.statistic),
        p_value: Some(two.p_value),
        n_b: sample_b.len(),
        one_sample,
        sample_b,
        ..base
    })
}
