use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSpec, Coefficients};
use crate::error::{Error, Result};
use crate::fbm::HurstParameter;
use crate::flow::DEFAULT_REFINEMENT;
use crate::schemes::SchemeKind;
use crate::variations::SigmaMode;

/// Which error functional an experiment measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `X̄ⁿ₁ - X₁`.
    #[default]
    PointwiseT1,
    /// `max_k |X̄ⁿ_{k/n} - X_{k/n}|`.
    SupNorm,
    /// `X̄ⁿ₁ - X₁`, aggregated as a root mean square.
    MeanSquare,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::PointwiseT1 => "pointwise_t1",
            Statistic::SupNorm => "sup_norm",
            Statistic::MeanSquare => "mean_square",
        }
    }
}

/// One Monte Carlo experiment. Read from JSON; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub h: HurstParameter,
    pub coefficients: CoefficientSpec,
    #[serde(default = "one")]
    pub x0: f64,
    pub scheme: SchemeKind,
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub statistic: Statistic,
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Worker threads; `None` uses the rayon default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Overrides the normalization exponent of the scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_exponent: Option<f64>,
    /// Accepted interval for the fitted rate (`rate`, `--assert`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_band: Option<[f64; 2]>,
    /// Bound on the median `|ratio - 1|` (`as-limit`, `--assert`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_tolerance: Option<f64>,
    /// Minimum KS p-value (`limit-law`, `--assert`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_threshold: Option<f64>,
    /// Bound on `|lhs/rhs - 1|` (`mean-square`, `--assert`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tolerance: Option<f64>,
    /// Skips the calibration run of the limit-law test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mode: Option<SigmaMode>,
    #[serde(default = "default_calibration_n")]
    pub calibration_n: usize,
    #[serde(default = "default_calibration_paths")]
    pub calibration_paths: usize,
    /// Seed of the calibration run; `master_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

fn default_refinement() -> usize {
    DEFAULT_REFINEMENT
}

fn default_calibration_n() -> usize {
    1 << 14
}

fn default_calibration_paths() -> usize {
    10_000
}

impl ExperimentConfig {
    /// A configuration with defaults for every optional field.
    pub fn new(
        h: f64,
        coefficients: CoefficientSpec,
        scheme: SchemeKind,
        n_list: Vec<usize>,
        n_paths: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            h: HurstParameter::new(h)?,
            coefficients,
            x0: 1.0,
            scheme,
            n_list,
            n_paths,
            master_seed,
            statistic: Statistic::default(),
            refinement: DEFAULT_REFINEMENT,
            threads: None,
            rate_exponent: None,
            rate_band: None,
            ratio_tolerance: None,
            p_threshold: None,
            gap_tolerance: None,
            sigma_mode: None,
            calibration_n: default_calibration_n(),
            calibration_paths: default_calibration_paths(),
            calibration_seed: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list is empty".into()));
        }
        for w in self.n_list.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Config("n_list must be strictly increasing".into()));
            }
        }
        if let Some(bad) = self.n_list.iter().find(|n| !n.is_power_of_two()) {
            return Err(Error::Config(format!("grid size {bad} is not a power of two")));
        }
        if self.n_paths < 2 {
            return Err(Error::Config("n_paths must be at least 2".into()));
        }
        if self.refinement == 0 {
            return Err(Error::Config("refinement must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if !self.calibration_n.is_power_of_two() || self.calibration_paths < 2 {
            return Err(Error::Config("calibration needs a power-of-two n and at least 2 paths".into()));
        }
        let coeffs = self.build_coefficients()?;
        match self.scheme {
            SchemeKind::CrankNicholson if !coeffs.has_zero_drift() => {
                Err(Error::Config("crank_nicholson requires b = 0".into()))
            }
            SchemeKind::ModifiedEulerLinear if !matches!(self.coefficients, CoefficientSpec::Linear { .. }) => {
                Err(Error::Config("modified_euler_linear requires linear coefficients".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build_coefficients(&self) -> Result<Coefficients> {
        Coefficients::from_spec(&self.coefficients)
    }

    pub fn n_max(&self) -> usize {
        *self.n_list.last().expect("validated")
    }

    /// Exponent `r` with `n^r·error` normalized.
    pub fn normalization_exponent(&self) -> f64 {
        self.rate_exponent.unwrap_or_else(|| self.scheme.rate_exponent(self.h.value()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: &str = r#"{
        "h": 0.7,
        "coefficients": {"kind": "linear", "gamma": 1.0, "beta": 0.5},
        "scheme": "euler",
        "n_list": [64, 128, 256],
        "n_paths": 10,
        "master_seed": 42
    }"#;

    #[test]
    fn parse_with_defaults() {
        let cfg = ExperimentConfig::from_json(EULER).unwrap();
        assert_eq!(cfg.x0, 1.0);
        assert_eq!(cfg.statistic, Statistic::PointwiseT1);
        assert_eq!(cfg.refinement, 8);
        assert!((cfg.normalization_exponent() - 0.4).abs() < 1e-15);
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            EULER.replace("[64, 128, 256]", "[64, 64]"),
            EULER.replace("[64, 128, 256]", "[64, 100]"),
            EULER.replace("[64, 128, 256]", "[]"),
            EULER.replace("\"n_paths\": 10", "\"n_paths\": 1"),
            EULER.replace("\"euler\"", "\"crank_nicholson\""),
            EULER.replace("\"h\": 0.7", "\"h\": 1.2"),
            EULER.replace("\"master_seed\": 42", "\"master_seed\": 42, \"bogus\": 1"),
        ];
        for text in &bad {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }
}
