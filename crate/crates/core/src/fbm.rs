//! Exact sampling of fractional Brownian motion.
//!
//! The covariance `R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2` is the single
//! source of truth: the Cholesky sampler factorizes the increment covariance
//! derived from it, and the Davies–Harte sampler embeds the stationary increment
//! autocovariance `θ(ℓ) n^{-2H}` into a circulant matrix of size `2n`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::rng::SeedTag;
use crate::variations::theta;

/// Hurst index `H ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParameter(f64);

impl HurstParameter {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidHurst(h))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HurstParameter {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<HurstParameter> for f64 {
    fn from(h: HurstParameter) -> f64 {
        h.0
    }
}

/// A partition `0 = t_0 < t_1 < … < t_n = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    equidistant: bool,
}

impl Grid {
    /// The grid `t_k = k / n`.
    pub fn equidistant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one step".into()));
        }
        let points = (0..=n).map(|k| k as f64 / n as f64).collect();
        Ok(Self {
            points,
            equidistant: true,
        })
    }

    /// An arbitrary partition of `[0, 1]`.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("grid needs at least two points".into()));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::InvalidGrid("grid must start at 0 and end at 1".into()));
        }
        if let Some(k) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                k + 1
            )));
        }
        let n = points.len() - 1;
        let equidistant = points
            .iter()
            .enumerate()
            .all(|(k, &p)| p == k as f64 / n as f64);
        Ok(Self {
            points,
            equidistant,
        })
    }

    /// Number of steps.
    #[inline]
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    #[inline]
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    #[inline]
    pub fn is_equidistant(&self) -> bool {
        self.equidistant
    }

    /// Step size of an equidistant grid.
    pub fn step(&self) -> Result<f64> {
        if self.equidistant {
            Ok(1.0 / self.n() as f64)
        } else {
            Err(Error::InvalidGrid("grid is not equidistant".into()))
        }
    }

    pub(crate) fn require_equidistant(&self) -> Result<()> {
        self.step().map(|_| ())
    }
}

/// One sampled fBm trajectory on a grid.
#[derive(Clone, Debug)]
pub struct FbmPath {
    grid: Grid,
    values: Vec<f64>,
    h: HurstParameter,
    seed_tag: Option<SeedTag>,
}

impl FbmPath {
    /// Wraps externally supplied values, e.g. a synthetic path `B_t = t`.
    pub fn from_values(grid: Grid, values: Vec<f64>, h: HurstParameter) -> Result<Self> {
        if values.len() != grid.points().len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for {} grid points",
                values.len(),
                grid.points().len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::Domain("fBm paths start at 0".into()));
        }
        Ok(Self {
            grid,
            values,
            h,
            seed_tag: None,
        })
    }

    /// Builds the path `B_{k/n} = Σ_{j<k} ΔB_j` from equidistant increments.
    pub fn from_increments(increments: &[f64], h: HurstParameter) -> Result<Self> {
        let grid = Grid::equidistant(increments.len())?;
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut level = 0.0;
        values.push(level);
        for &d in increments {
            level += d;
            values.push(level);
        }
        Self::from_values(grid, values, h)
    }

    pub fn with_seed_tag(mut self, tag: SeedTag) -> Self {
        self.seed_tag = Some(tag);
        self
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn hurst(&self) -> HurstParameter {
        self.h
    }

    #[inline]
    pub fn seed_tag(&self) -> Option<SeedTag> {
        self.seed_tag
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// `ΔB_k = B_{t_{k+1}} - B_{t_k}`.
    #[inline]
    pub fn increment(&self, k: usize) -> f64 {
        self.values[k + 1] - self.values[k]
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `B_1`.
    #[inline]
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Exact restriction of an equidistant path to the coarser grid with `n` steps.
    pub fn restrict(&self, n: usize) -> Result<Self> {
        self.grid.require_equidistant()?;
        let fine = self.n();
        if n == 0 || !fine.is_multiple_of(n) {
            return Err(Error::InvalidGrid(format!(
                "cannot restrict a {fine}-step path to {n} steps"
            )));
        }
        let stride = fine / n;
        Ok(Self {
            grid: Grid::equidistant(n)?,
            values: self.values.iter().step_by(stride).copied().collect(),
            h: self.h,
            seed_tag: self.seed_tag,
        })
    }

    /// Writes the `t,B` CSV dump.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,B")?;
        for (t, b) in self.grid.points().iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*b))?;
        }
        Ok(())
    }
}

/// `R_H(s, t)`.
pub fn covariance(h: HurstParameter, s: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("covariance at ({s}, {t}) outside [0, 1]^2")));
    }
    Ok(covariance_unchecked(h.value(), s, t))
}

#[inline]
fn covariance_unchecked(h: f64, s: f64, t: f64) -> f64 {
    let two_h = 2.0 * h;
    0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
}

/// Cholesky sampler on an arbitrary grid. The factorization of the increment
/// covariance is computed once and shared by every draw.
#[derive(Clone, Debug)]
pub struct CholeskySampler {
    h: HurstParameter,
    grid: Grid,
    /// Row-major lower-triangular factor, `n × n`.
    lower: Vec<f64>,
}

impl CholeskySampler {
    pub fn new(h: HurstParameter, grid: Grid) -> Result<Self> {
        Self::build(h, grid, None)
    }

    /// Adds `jitter` to the diagonal before factorizing. Explicit opt-in only.
    pub fn with_jitter(h: HurstParameter, grid: Grid, jitter: f64) -> Result<Self> {
        Self::build(h, grid, Some(jitter))
    }

    fn build(h: HurstParameter, grid: Grid, jitter: Option<f64>) -> Result<Self> {
        let n = grid.n();
        let p = grid.points();
        let hv = h.value();
        let r = |s: f64, t: f64| covariance_unchecked(hv, s, t);
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let c = r(p[i + 1], p[j + 1]) - r(p[i + 1], p[j]) - r(p[i], p[j + 1])
                    + r(p[i], p[j]);
                cov[i * n + j] = c;
                cov[j * n + i] = c;
            }
            if let Some(eps) = jitter {
                cov[i * n + i] += eps;
            }
        }
        let lower = cholesky_in_place(cov, n)?;
        Ok(Self { h, grid, lower })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FbmPath {
        let n = self.grid.n();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        let mut level = 0.0;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            let inc: f64 = row.iter().zip(&z).map(|(l, z)| l * z).sum();
            level += inc;
            values.push(level);
        }
        FbmPath {
            grid: self.grid.clone(),
            values,
            h: self.h,
            seed_tag: None,
        }
    }
}

fn cholesky_in_place(mut a: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::CholeskyFailure { pivot: j, value: d });
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(a)
}

/// One exact draw on `grid` via Cholesky factorization (`O(n^3)`).
pub fn sample_cholesky<R: Rng + ?Sized>(
    h: HurstParameter,
    grid: &Grid,
    rng: &mut R,
) -> Result<FbmPath> {
    Ok(CholeskySampler::new(h, grid.clone())?.sample(rng))
}

/// Davies–Harte circulant-embedding sampler for the equidistant grid with `n` steps.
#[derive(Clone)]
pub struct DaviesHarte {
    h: HurstParameter,
    n: usize,
    /// `sqrt(λ_j / 2n)` for the circulant eigenvalues `λ_j`.
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DaviesHarte {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DaviesHarte")
            .field("h", &self.h)
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl DaviesHarte {
    pub fn new(h: HurstParameter, n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "Davies-Harte needs a power-of-two n, got {n}"
            )));
        }
        let m = 2 * n;
        let scale_n = (n as f64).powf(-2.0 * h.value());
        // First row of the circulant: γ(0..=n) followed by γ(n-1..=1).
        let mut row: Vec<Complex64> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex64::new(theta(h.value(), lag as u64) * scale_n, 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft.process(&mut row);

        let max = row.iter().map(|c| c.re).fold(0.0, f64::max);
        let (argmin, min) = row
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.re))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        // Rounding noise may push exact zeros slightly negative.
        if min < -1e-10 * max {
            return Err(Error::NegativeEigenvalue {
                index: argmin,
                value: min,
            });
        }
        let scale = row
            .iter()
            .map(|c| (c.re.max(0.0) / m as f64).sqrt())
            .collect();
        Ok(Self { h, n, scale, fft })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hurst(&self) -> HurstParameter {
        self.h
    }

    /// Draws the `n` increments `ΔB_k`.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let m = 2 * n;
        let mut w = vec![Complex64::new(0.0, 0.0); m];
        let first: Vec<f64> = (0..=n).map(|_| rng.sample(StandardNormal)).collect();
        let second: Vec<f64> = (1..n).map(|_| rng.sample(StandardNormal)).collect();
        w[0] = Complex64::new(self.scale[0] * first[0], 0.0);
        w[n] = Complex64::new(self.scale[n] * first[n], 0.0);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for j in 1..n {
            let s = self.scale[j] * half;
            let c = Complex64::new(s * first[j], s * second[j - 1]);
            w[j] = c;
            w[m - j] = c.conj();
        }
        self.fft.process(&mut w);
        w.truncate(n);
        w.into_iter().map(|c| c.re).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FbmPath {
        let inc = self.sample_increments(rng);
        FbmPath::from_increments(&inc, self.h).expect("increments build a valid path")
    }
}

/// One exact equidistant draw via Davies–Harte (Cholesky fallback for
/// non-power-of-two `n`).
pub fn sample_davies_harte<R: Rng + ?Sized>(
    h: HurstParameter,
    n: usize,
    rng: &mut R,
) -> Result<FbmPath> {
    Ok(FbmSampler::equidistant(h, n)?.sample(rng))
}

/// Equidistant sampler that picks Davies–Harte when possible.
#[derive(Clone, Debug)]
pub enum FbmSampler {
    DaviesHarte(DaviesHarte),
    Cholesky(CholeskySampler),
}

impl FbmSampler {
    pub fn equidistant(h: HurstParameter, n: usize) -> Result<Self> {
        if n.is_power_of_two() {
            Ok(Self::DaviesHarte(DaviesHarte::new(h, n)?))
        } else {
            log::warn!("n = {n} is not a power of two; falling back to Cholesky sampling");
            Ok(Self::Cholesky(CholeskySampler::new(h, Grid::equidistant(n)?)?))
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::DaviesHarte(dh) => dh.n(),
            Self::Cholesky(c) => c.grid().n(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FbmPath {
        match self {
            Self::DaviesHarte(dh) => dh.sample(rng),
            Self::Cholesky(c) => c.sample(rng),
        }
    }

    /// Draw from the stream identified by `tag`.
    pub fn sample_tagged(&self, tag: SeedTag) -> FbmPath {
        self.sample(&mut tag.stream()).with_seed_tag(tag)
    }
}
