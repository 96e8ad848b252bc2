//! Power variations of sampled fBm paths against their limits.

use serde::{Deserialize, Serialize};

use super::par_map;
use crate::error::{Error, Result};
use crate::fbm::{DaviesHarte, HurstParameter};
use crate::rng::{Purpose, SeedTag};
use crate::stats::{mean_and_se, variance_and_se};
use crate::variations::{even_moment_constant, second_order_quadratic_variation, sigma_h_squared, SigmaMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationConfig {
    pub h: HurstParameter,
    pub n: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Power `m ≥ 1`.
    pub m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationReport {
    pub h: f64,
    pub n: usize,
    pub m: u32,
    pub n_paths: usize,
    /// `mH - 1` for even `m`, `mH - 1/2` for odd `m`.
    pub normalization_exponent: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    /// `(m-1)!!` for even `m`, `0` for odd `m`.
    pub expected_mean: f64,
    /// For `m = 3`: the finite-n variance `σ_H² + 9n^{2H-1}` (variance-limit form), where defined.
    pub expected_variance: Option<f64>,
    /// Mean of `n^{2H-1}V_n²` (second-order quadratic variation).
    pub second_order_mean: f64,
    pub second_order_se: f64,
    /// `4 - 2^{2H}`.
    pub second_order_limit: f64,
    #[serde(skip)]
    pub normalized: Vec<f64>,
}

impl VariationReport {
    /// `|mean - expected_mean| ≤ k·SE`.
    pub fn mean_within(&self, k: f64) -> bool {
        (self.mean - self.expected_mean).abs() <= k * self.mean_se
    }
}

pub fn run_variation_experiment(cfg: &VariationConfig) -> Result<VariationReport> {
    if cfg.m == 0 {
        return Err(Error::Config("m must be positive".into()));
    }
    if cfg.n_paths < 2 {
        return Err(Error::Config("n_paths must be at least 2".into()));
    }
    let h = cfg.h.value();
    let sampler = DaviesHarte::new(cfg.h, cfg.n)?;
    let nf = cfg.n as f64;
    let even = cfg.m.is_multiple_of(2);
    let exponent = cfg.m as f64 * h - if even { 1.0 } else { 0.5 };
    let scale = nf.powf(exponent);
    let qv_scale = nf.powf(2.0 * h - 1.0);
    let per_path = par_map(cfg.threads, cfg.n_paths, |i| -> Result<(f64, f64)> {
        let path = sampler.sample(&mut SeedTag::new(cfg.master_seed, Purpose::Variation, i as u64).stream());
        let v: f64 = path.increments().iter().map(|d| d.powi(cfg.m as i32)).sum();
        Ok((v * scale, second_order_quadratic_variation(&path)? * qv_scale))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let normalized: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let qv: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let (mean, mean_se) = mean_and_se(&normalized);
    let (variance, variance_se) = variance_and_se(&normalized);
    let (second_order_mean, second_order_se) = mean_and_se(&qv);
    let expected_mean = if even { even_moment_constant(cfg.m)? } else { 0.0 };
    let expected_variance = (cfg.m == 3)
        .then(|| sigma_h_squared(h, SigmaMode::VarianceLimit).ok())
        .flatten()
        .map(|s| s.value + 9.0 * nf.powf(2.0 * h - 1.0));
    Ok(VariationReport {
        h,
        n: cfg.n,
        m: cfg.m,
        n_paths: cfg.n_paths,
        normalization_exponent: exponent,
        mean,
        mean_se,
        variance,
        variance_se,
        expected_mean,
        expected_variance,
        second_order_mean,
        second_order_se,
        second_order_limit: 4.0 - 2f64.powf(2.0 * h),
        normalized,
    })
}
