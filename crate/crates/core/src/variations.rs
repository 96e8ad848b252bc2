//! Power variations of fractional Brownian motion and the `σ_H` constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::FbmPath;

/// Below this lag `θ(ℓ)` is evaluated directly; above it the binomial series is used.
const SERIES_THRESHOLD: u64 = 8;
const SERIES_TERMS: usize = 64;

/// Increment correlations `θ(ℓ) = ((ℓ+1)^{2H} + |ℓ-1|^{2H} - 2ℓ^{2H}) / 2` of
/// unit-step fractional Gaussian noise.
///
/// For large `ℓ` the three powers agree to many digits, so the sequence is
/// evaluated as `ℓ^{2H} Σ_{k even ≥ 2} C(2H, k) ℓ^{-k}`, which has no cancellation.
#[derive(Clone, Debug)]
pub struct ThetaSequence {
    h: f64,
    /// Binomial coefficients `C(2H, k)` for even `k ≥ 2`.
    even_binomials: Vec<f64>,
}

impl ThetaSequence {
    pub fn new(h: f64) -> Self {
        let p = 2.0 * h;
        let mut c = 1.0;
        let mut even_binomials = Vec::with_capacity(SERIES_TERMS / 2);
        for k in 1..=SERIES_TERMS {
            c *= (p - (k as f64 - 1.0)) / k as f64;
            if k % 2 == 0 {
                even_binomials.push(c);
            }
        }
        Self { h, even_binomials }
    }

    pub fn hurst(&self) -> f64 {
        self.h
    }

    pub fn get(&self, ell: u64) -> f64 {
        let two_h = 2.0 * self.h;
        if ell == 0 {
            return 1.0;
        }
        let l = ell as f64;
        if ell < SERIES_THRESHOLD {
            return 0.5 * ((l + 1.0).powf(two_h) + (l - 1.0).powf(two_h) - 2.0 * l.powf(two_h));
        }
        let x2 = 1.0 / (l * l);
        let mut power = x2;
        let mut sum = 0.0;
        for &c in &self.even_binomials {
            let term = c * power;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            power *= x2;
        }
        l.powf(two_h) * sum
    }
}

/// `θ(ℓ)` for a single lag.
pub fn theta(h: f64, ell: u64) -> f64 {
    if ell < SERIES_THRESHOLD {
        let two_h = 2.0 * h;
        if ell == 0 {
            return 1.0;
        }
        let l = ell as f64;
        return 0.5 * ((l + 1.0).powf(two_h) + (l - 1.0).powf(two_h) - 2.0 * l.powf(two_h));
    }
    ThetaSequence::new(h).get(ell)
}

/// Which closed form of `σ_H^2` to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `4/3 + (1/3) Σ_{ℓ≥1} θ(ℓ)^3`, the cubic series form.
    PaperSeries,
    /// `lim Var[n^{-1/2} Σ_k (n^H ΔB_k)^3] = 15 + 2 Σ_{ℓ≥1} (6θ(ℓ)^3 + 9θ(ℓ))`,
    /// derived from `E[X^3 Y^3] = 6ρ^3 + 9ρ`.
    VarianceLimit,
}

impl SigmaMode {
    pub const ALL: [SigmaMode; 2] = [SigmaMode::PaperSeries, SigmaMode::VarianceLimit];

    pub fn name(self) -> &'static str {
        match self {
            SigmaMode::PaperSeries => "paper_series",
            SigmaMode::VarianceLimit => "variance_limit",
        }
    }
}

/// A truncated series value together with a bound on the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SigmaHSquared {
    pub mode: SigmaMode,
    pub value: f64,
    pub error_estimate: f64,
    pub terms: u64,
}

const SIGMA_TERM_CUTOFF: f64 = 1e-14;
const SIGMA_MAX_TERMS: u64 = 10_000_000;

/// `σ_H^2` in the requested mode, for `H < 3/4`.
///
/// The cubic series is truncated once `|θ(ℓ)|^3 < 10^{-14}` (or at `ℓ = 10^7`).
/// In `VarianceLimit` mode the linear part telescopes:
/// `Σ_{ℓ≥1} θ(ℓ) = lim ((L+1)^{2H} - L^{2H} - 1) / 2`, which is `-1/2` for `H < 1/2`,
/// `0` at `H = 1/2`, and divergent above, where the limit variance is infinite.
pub fn sigma_h_squared(h: f64, mode: SigmaMode) -> Result<SigmaHSquared> {
    sigma_series(h, mode, SIGMA_MAX_TERMS, true)
}

/// Same as [`sigma_h_squared`] but summing exactly `terms` lags of the cubic series.
pub fn sigma_h_squared_with_terms(h: f64, mode: SigmaMode, terms: u64) -> Result<SigmaHSquared> {
    sigma_series(h, mode, terms, false)
}

fn sigma_series(h: f64, mode: SigmaMode, max_terms: u64, early_stop: bool) -> Result<SigmaHSquared> {
    if !(h > 0.0 && h < 0.75) {
        return Err(Error::Domain(format!(
            "sigma_H^2 requires 0 < H < 3/4, got {h}"
        )));
    }
    let linear_sum = match mode {
        SigmaMode::PaperSeries => 0.0,
        SigmaMode::VarianceLimit if h < 0.5 => -0.5,
        SigmaMode::VarianceLimit if h == 0.5 => 0.0,
        SigmaMode::VarianceLimit => {
            return Err(Error::Domain(format!(
                "the variance of n^(3H-1/2) sum (dB)^3 diverges for H = {h} > 1/2"
            )))
        }
    };
    let seq = ThetaSequence::new(h);
    let mut cubic = 0.0;
    let mut ell = 0;
    let mut last = 0.0f64;
    while ell < max_terms {
        ell += 1;
        let t = seq.get(ell);
        last = t * t * t;
        cubic += last;
        if early_stop && last.abs() < SIGMA_TERM_CUTOFF {
            break;
        }
    }
    // |θ(ℓ)|^3 decays like ℓ^{-q} with q = 6 - 6H > 3/2; bound the tail by the
    // integral of the last term's envelope.
    let q = 6.0 - 6.0 * h;
    let tail = if h == 0.5 { 0.0 } else { last.abs() * ell as f64 / (q - 1.0) };
    let (value, error_estimate) = match mode {
        SigmaMode::PaperSeries => (4.0 / 3.0 + cubic / 3.0, tail / 3.0),
        SigmaMode::VarianceLimit => (15.0 + 12.0 * cubic + 18.0 * linear_sum, 12.0 * tail),
    };
    Ok(SigmaHSquared {
        mode,
        value,
        error_estimate,
        terms: ell,
    })
}

/// `m!/(2^{m/2}(m/2)!) = E[N(0,1)^m]` for even `m`.
pub fn even_moment_constant(m: u32) -> Result<f64> {
    if !m.is_multiple_of(2) {
        return Err(Error::Domain(format!("moment constant needs even m, got {m}")));
    }
    // (m-1)!!
    Ok((1..m).step_by(2).map(f64::from).product())
}

/// `Σ_{k < t_index} (ΔB_k)^m`, unnormalized.
///
/// Panics if `t_index` exceeds the number of steps.
pub fn power_variation(path: &FbmPath, m: u32, t_index: usize) -> f64 {
    assert!(t_index <= path.n(), "t_index {t_index} beyond {} steps", path.n());
    let v = path.values();
    let mut sum = 0.0;
    for k in 0..t_index {
        sum += (v[k + 1] - v[k]).powi(m as i32);
    }
    sum
}

/// Cumulative power variation `V_m(t_k)` at every grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationStat {
    pub m: u32,
    /// `values[k] = Σ_{j<k} (ΔB_j)^m`.
    pub values: Vec<f64>,
    /// Exponent `e` such that `n^e · values` is the normalized statistic.
    pub normalization_exponent: f64,
}

impl VariationStat {
    pub fn normalized(&self) -> Vec<f64> {
        let n = (self.values.len() - 1) as f64;
        let scale = n.powf(self.normalization_exponent);
        self.values.iter().map(|v| v * scale).collect()
    }
}

pub fn power_variation_profile(path: &FbmPath, m: u32, normalization_exponent: f64) -> VariationStat {
    let v = path.values();
    let mut values = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    values.push(sum);
    for w in v.windows(2) {
        sum += (w[1] - w[0]).powi(m as i32);
        values.push(sum);
    }
    VariationStat {
        m,
        values,
        normalization_exponent,
    }
}

/// `V_n^2 = Σ_{k=1}^{n-1} (B_{(k+1)/n} - 2B_{k/n} + B_{(k-1)/n})^2`.
pub fn second_order_quadratic_variation(path: &FbmPath) -> Result<f64> {
    if path.n() < 2 {
        return Err(Error::Domain(
            "second-order variation needs at least two steps".into(),
        ));
    }
    Ok(path
        .values()
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2))
        .sum())
}

/// `Σ_k h(B_k) (ΔB_k)^m`, or with `corrected` the centered version
/// `Σ_k [h(B_k) + h'(B_k) ΔB_k / 2] (ΔB_k)^m`.
pub fn weighted_variation<F, D>(path: &FbmPath, weight: F, weight_deriv: D, m: u32, corrected: bool) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    path.values()
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let mut coef = weight(w[0]);
            if corrected {
                coef += 0.5 * weight_deriv(w[0]) * d;
            }
            coef * d.powi(m as i32)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{Grid, HurstParameter};
    use approx::assert_relative_eq;

    fn naive_theta(h: f64, l: f64) -> f64 {
        0.5 * ((l + 1.0).powf(2.0 * h) + (l - 1.0).abs().powf(2.0 * h) - 2.0 * l.powf(2.0 * h))
    }

    #[test]
    fn theta_reference_values() {
        assert_eq!(theta(0.5, 1), 0.0);
        for h in [0.1, 0.5, 0.9] {
            assert_eq!(theta(h, 0), 1.0);
        }
        assert_relative_eq!(theta(0.75, 1), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(theta(0.75, 1), 0.414_213_562_373_095, epsilon = 1e-12);
    }

    #[test]
    fn theta_series_matches_direct_form_where_both_are_accurate() {
        for h in [0.2, 1.0 / 3.0, 0.45, 0.7] {
            let seq = ThetaSequence::new(h);
            for l in [8u64, 9, 12, 20, 40] {
                assert_relative_eq!(seq.get(l), naive_theta(h, l as f64), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn theta_far_tail_follows_power_law() {
        // θ(ℓ) ~ H(2H-1) ℓ^{2H-2} with relative correction O(ℓ^{-2}).
        for h in [0.3, 0.7] {
            let l = 1e6;
            let approx = h * (2.0 * h - 1.0) * f64::powf(l, 2.0 * h - 2.0);
            assert_relative_eq!(theta(h, l as u64), approx, max_relative = 1e-10);
        }
    }

    #[test]
    fn theta_negative_below_half() {
        let seq = ThetaSequence::new(0.3);
        for l in 1..2000 {
            assert!(seq.get(l) < 0.0);
        }
    }

    #[test]
    fn theta_telescoping_identity() {
        for h in [0.2, 1.0 / 3.0, 0.45, 0.5, 0.6, 0.9] {
            let seq = ThetaSequence::new(h);
            // Neumaier summation; the partial sums reach ~10^2 at h = 0.9
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for l in 1..=10_000u64 {
                let v = seq.get(l);
                let t = sum + v;
                comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
                sum = t;
                let sum = sum + comp;
                if l % 997 == 0 || l == 10_000 {
                    let lf = l as f64;
                    // (L+1)^{2H} - L^{2H} without cancellation
                    let rhs = lf.powf(2.0 * h) * (2.0 * h * (1.0 / lf).ln_1p()).exp_m1();
                    assert!((1.0 + 2.0 * sum - rhs).abs() < 1e-12, "h={h} L={l} gap={}", 1.0 + 2.0 * sum - rhs);
                }
            }
        }
    }

    #[test]
    fn sigma_series_at_brownian_index() {
        let p = sigma_h_squared(0.5, SigmaMode::PaperSeries).unwrap();
        assert_eq!(p.value, 4.0 / 3.0);
        let v = sigma_h_squared(0.5, SigmaMode::VarianceLimit).unwrap();
        assert_eq!(v.value, 15.0);
    }

    #[test]
    fn sigma_domain_errors() {
        assert!(sigma_h_squared(0.75, SigmaMode::PaperSeries).is_err());
        assert!(sigma_h_squared(0.6, SigmaMode::VarianceLimit).is_err());
        assert!(sigma_h_squared(0.6, SigmaMode::PaperSeries).is_ok());
    }

    #[test]
    fn sigma_stable_under_truncation_doubling() {
        for h in [0.2, 1.0 / 3.0, 0.45] {
            for mode in SigmaMode::ALL {
                let auto = sigma_h_squared(h, mode).unwrap();
                let doubled = sigma_h_squared_with_terms(h, mode, 2 * auto.terms).unwrap();
                assert!((auto.value - doubled.value).abs() < 1e-10, "{h} {mode:?}");
                assert!(auto.error_estimate >= (auto.value - doubled.value).abs());
            }
        }
    }

    #[test]
    fn even_moment_constants() {
        assert_eq!(even_moment_constant(2).unwrap(), 1.0);
        assert_eq!(even_moment_constant(4).unwrap(), 3.0);
        assert_eq!(even_moment_constant(6).unwrap(), 15.0);
        assert!(even_moment_constant(3).is_err());
    }

    fn line_path(n: usize) -> FbmPath {
        let grid = Grid::equidistant(n).unwrap();
        let values = grid.points().to_vec();
        FbmPath::from_values(grid, values, HurstParameter::new(0.5).unwrap()).unwrap()
    }

    #[test]
    fn straight_line_statistics() {
        let p = line_path(64);
        assert_eq!(second_order_quadratic_variation(&p).unwrap(), 0.0);
        assert_relative_eq!(power_variation(&p, 1, 64), 1.0, epsilon = 1e-14);
        assert_relative_eq!(power_variation(&p, 2, 64), 1.0 / 64.0, epsilon = 1e-15);
        let w = weighted_variation(&p, |_| 1.0, |_| 0.0, 2, false);
        assert_eq!(w, power_variation(&p, 2, 64));
        assert!(second_order_quadratic_variation(&line_path(1)).is_err());
    }

    #[test]
    fn profile_is_cumulative_and_nondecreasing_for_even_order() {
        let p = line_path(16);
        let prof = power_variation_profile(&p, 2, 1.0);
        assert_eq!(prof.values.len(), 17);
        assert!(prof.values.windows(2).all(|w| w[1] >= w[0]));
        assert_relative_eq!(prof.normalized()[16], 1.0, epsilon = 1e-14);
    }
}
