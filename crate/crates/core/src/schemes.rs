//! Euler, modified Euler (linear equation) and Crank–Nicholson schemes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientKind, Coefficients};
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, Grid};
use crate::output::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Euler,
    ModifiedEulerLinear,
    CrankNicholson,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Euler => "euler",
            SchemeKind::ModifiedEulerLinear => "modified_euler_linear",
            SchemeKind::CrankNicholson => "crank_nicholson",
        }
    }

    /// Exponent `r` such that `n^r` times the error has a nondegenerate limit.
    pub fn rate_exponent(self, h: f64) -> f64 {
        match self {
            SchemeKind::Euler | SchemeKind::ModifiedEulerLinear => 2.0 * h - 1.0,
            SchemeKind::CrankNicholson => 3.0 * h - 0.5,
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SchemeKind::Euler),
            "modified_euler_linear" | "modified-euler-linear" => Ok(SchemeKind::ModifiedEulerLinear),
            "crank_nicholson" | "crank-nicholson" | "cn" => Ok(SchemeKind::CrankNicholson),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchemeResult {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub scheme: SchemeKind,
    /// Newton iterations per step; Crank–Nicholson only, 0 for closed-form steps.
    pub newton_iterations: Option<Vec<u32>>,
}

impl SchemeResult {
    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Writes `t,X_scheme,X_reference,error`, leaving the last two columns empty
    /// without a reference.
    pub fn write_csv<W: Write>(&self, mut out: W, reference: Option<&[f64]>) -> std::io::Result<()> {
        writeln!(out, "t,X_scheme,X_reference,error")?;
        for (k, (t, x)) in self.grid.points().iter().zip(&self.values).enumerate() {
            match reference {
                Some(r) => writeln!(out, "{},{},{},{}", fmt_f64(*t), fmt_f64(*x), fmt_f64(r[k]), fmt_f64(x - r[k]))?,
                None => writeln!(out, "{},{},,", fmt_f64(*t), fmt_f64(*x))?,
            }
        }
        Ok(())
    }
}

/// Runs `kind` on `path`.
pub fn run_scheme(kind: SchemeKind, coeffs: &Coefficients, path: &FbmPath, x0: f64) -> Result<SchemeResult> {
    match kind {
        SchemeKind::Euler => euler_path(coeffs, path, x0),
        SchemeKind::ModifiedEulerLinear => match *coeffs.kind() {
            CoefficientKind::Linear { gamma, beta } => modified_euler_linear(gamma, beta, path, x0),
            _ => Err(Error::Config("modified_euler_linear needs linear coefficients".into())),
        },
        SchemeKind::CrankNicholson => crank_nicholson_path(coeffs, path, x0),
    }
}

/// `X_{k+1} = X_k + σ(X_k)ΔB_k + b(X_k)/n`.
pub fn euler_path(coeffs: &Coefficients, path: &FbmPath, x0: f64) -> Result<SchemeResult> {
    let grid = path.grid().clone();
    let dt = grid.step()?;
    let b = path.values();
    let mut values = Vec::with_capacity(b.len());
    let mut x = x0;
    values.push(x);
    for k in 0..grid.n() {
        let s = coeffs.sigma_checked(x)?;
        x = x + s * (b[k + 1] - b[k]) + coeffs.drift(x) * dt;
        values.push(x);
    }
    Ok(SchemeResult { grid, values, scheme: SchemeKind::Euler, newton_iterations: None })
}

/// Euler for `σ(x) = γx`, `b(x) = βx` with the extra term `(γ²/2)X_kΔB_kΔB_{k-1}`,
/// taking `ΔB_{-1} = 0`.
pub fn modified_euler_linear(gamma: f64, beta: f64, path: &FbmPath, x0: f64) -> Result<SchemeResult> {
    let grid = path.grid().clone();
    let dt = grid.step()?;
    let b = path.values();
    let mut values = Vec::with_capacity(b.len());
    let mut x = x0;
    let mut prev = 0.0;
    values.push(x);
    for k in 0..grid.n() {
        let db = b[k + 1] - b[k];
        x += gamma * x * db + 0.5 * gamma * gamma * x * db * prev + beta * x * dt;
        prev = db;
        values.push(x);
    }
    Ok(SchemeResult { grid, values, scheme: SchemeKind::ModifiedEulerLinear, newton_iterations: None })
}

/// How the implicit Crank–Nicholson step is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ImplicitSolver {
    /// Closed-form step for affine `σ`, Newton otherwise.
    #[default]
    Auto,
    /// Newton iteration (with bisection fallback) for every kind.
    Newton,
}

const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: u32 = 50;

/// Each step solves `x - ½ΔB·σ(x) = X_k + ½ΔB·σ(X_k)`. Requires `b ≡ 0`.
pub fn crank_nicholson_path(coeffs: &Coefficients, path: &FbmPath, x0: f64) -> Result<SchemeResult> {
    crank_nicholson_path_with(coeffs, path, x0, ImplicitSolver::Auto)
}

pub fn crank_nicholson_path_with(
    coeffs: &Coefficients,
    path: &FbmPath,
    x0: f64,
    solver: ImplicitSolver,
) -> Result<SchemeResult> {
    if !coeffs.has_zero_drift() {
        return Err(Error::Config("the Crank-Nicholson scheme is defined for b = 0 only".into()));
    }
    let grid = path.grid().clone();
    grid.require_equidistant()?;
    let b = path.values();
    let affine = match solver {
        ImplicitSolver::Auto => coeffs.affine_sigma(),
        ImplicitSolver::Newton => None,
    };
    let bound = coeffs.dsigma_bound();
    let mut values = Vec::with_capacity(b.len());
    let mut iterations = Vec::with_capacity(grid.n());
    let mut x = x0;
    values.push(x);
    for k in 0..grid.n() {
        let db = b[k + 1] - b[k];
        if let Some(d) = bound {
            if 0.5 * db.abs() * d >= 1.0 {
                return Err(Error::StepNotInvertible { step: k, increment: db });
            }
        }
        if let Some((slope, center)) = affine {
            let y = x - center;
            x = center + y * (1.0 + 0.5 * slope * db) / (1.0 - 0.5 * slope * db);
            iterations.push(0);
        } else {
            let (next, it) = implicit_step(coeffs, x, db, k)?;
            x = next;
            iterations.push(it);
        }
        values.push(x);
    }
    Ok(SchemeResult { grid, values, scheme: SchemeKind::CrankNicholson, newton_iterations: Some(iterations) })
}

/// Solves `x - ½ΔB·σ(x) = rhs` by Newton from the explicit predictor, falling
/// back to bisection.
fn implicit_step(coeffs: &Coefficients, xk: f64, db: f64, step: usize) -> Result<(f64, u32)> {
    let half = 0.5 * db;
    let rhs = xk + half * coeffs.sigma_checked(xk)?;
    let tol = NEWTON_TOL * (1.0 + rhs.abs());
    let g = |x: f64| x - half * coeffs.sigma(x) - rhs;

    let mut x = rhs;
    for it in 1..=NEWTON_MAX_ITER {
        let gx = g(x);
        if gx.is_nan() {
            break;
        }
        let dg = 1.0 - half * coeffs.dsigma(x);
        if !(dg.is_finite() && dg > 0.0) {
            break;
        }
        x -= gx / dg;
        let r = g(x);
        if r.abs() <= tol {
            return Ok((x, it));
        }
        if !x.is_finite() {
            break;
        }
    }
    bisection(&g, xk, rhs, half, coeffs, tol, step).map(|x| (x, NEWTON_MAX_ITER))
}

fn bisection<G: Fn(f64) -> f64>(
    g: &G,
    xk: f64,
    rhs: f64,
    half: f64,
    coeffs: &Coefficients,
    tol: f64,
    step: usize,
) -> Result<f64> {
    let local = coeffs.sigma(xk).abs().max(coeffs.sigma(rhs).abs());
    let mut w = 4.0 * (2.0 * half).abs() * local;
    if !w.is_finite() || w <= 0.0 {
        w = 1e-8 * (1.0 + rhs.abs());
    }
    // widen until the bracket straddles a root
    let (mut lo, mut hi) = (rhs - w, rhs + w);
    let mut widen = 0;
    while !(g(lo) <= 0.0 && g(hi) >= 0.0) {
        widen += 1;
        if widen > 20 {
            return Err(Error::NewtonDivergence { step });
        }
        w *= 2.0;
        lo = rhs - w;
        hi = rhs + w;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.is_nan() {
            return Err(Error::NewtonDivergence { step });
        }
        if gm.abs() <= tol {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs() {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    if g(mid).abs() <= tol {
        Ok(mid)
    } else {
        Err(Error::NewtonDivergence { step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CustomCoefficients;
    use crate::fbm::{FbmSampler, HurstParameter};
    use crate::rng::{stream, Purpose};
    use std::sync::Arc;

    fn path(h: f64, n: usize, index: u64) -> FbmPath {
        let mut rng = stream(5, Purpose::FbmPath, index);
        FbmSampler::equidistant(HurstParameter::new(h).unwrap(), n).unwrap().sample(&mut rng)
    }

    fn line(n: usize) -> FbmPath {
        let incs = vec![1.0 / n as f64; n];
        FbmPath::from_increments(&incs, HurstParameter::new(0.5).unwrap()).unwrap()
    }

    #[test]
    fn euler_deterministic_growth() {
        let c = Coefficients::custom(CustomCoefficients {
            name: "drift only".into(),
            sigma: Arc::new(|_| 0.0),
            dsigma: Arc::new(|_| 0.0),
            d2sigma: Arc::new(|_| 0.0),
            drift: Some((Arc::new(|x| x), Arc::new(|_| 1.0))),
            dsigma_bound: Some(0.0),
        });
        let n = 64;
        let r = euler_path(&c, &path(0.3, n, 0), 2.0).unwrap();
        for (k, x) in r.values.iter().enumerate() {
            let exact = 2.0 * (1.0 + 1.0 / n as f64).powi(k as i32);
            assert!((x - exact).abs() < 1e-13 * exact);
        }
    }

    #[test]
    fn constant_sigma_is_exact() {
        let c = Coefficients::constant(0.8);
        let p = path(0.3, 512, 1);
        let e = euler_path(&c, &p, 1.0).unwrap();
        let cn = crank_nicholson_path(&c, &p, 1.0).unwrap();
        for k in 0..=512 {
            let exact = 1.0 + 0.8 * p.values()[k];
            assert!((e.values[k] - exact).abs() < 1e-12);
            assert!((cn.values[k] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_linear_product_form() {
        let (gamma, beta) = (1.2, 0.5);
        let c = Coefficients::linear(gamma, beta);
        let p = path(0.7, 1024, 2);
        let r = euler_path(&c, &p, 1.0).unwrap();
        let prod: f64 = p.increments().iter().map(|db| 1.0 + gamma * db + beta / 1024.0).product();
        assert!((r.terminal() - prod).abs() < 1e-12 * prod.abs());
    }

    #[test]
    fn modified_reduces_to_euler_without_noise_coefficient() {
        let p = path(0.7, 256, 3);
        let m = modified_euler_linear(0.0, 0.4, &p, 1.5).unwrap();
        let e = euler_path(&Coefficients::linear(0.0, 0.4), &p, 1.5).unwrap();
        assert_eq!(m.values, e.values);
    }

    #[test]
    fn modified_on_straight_line() {
        let n = 100;
        let p = line(n);
        let m = modified_euler_linear(1.0, 0.0, &p, 1.0).unwrap();
        let d = 1.0 / n as f64;
        // first factor has no lagged increment
        let direct = (1.0 + d) * (1.0 + d + 0.5 * d * d).powi(n as i32 - 1);
        assert!((m.terminal() - direct).abs() < 1e-13);
    }

    #[test]
    fn crank_nicholson_linear_product() {
        let c = Coefficients::linear(1.0, 0.0);
        let p = path(0.5, 1024, 4);
        let prod: f64 = p.increments().iter().map(|db| (1.0 + db / 2.0) / (1.0 - db / 2.0)).product();
        let closed = crank_nicholson_path(&c, &p, 1.0).unwrap();
        let newton = crank_nicholson_path_with(&c, &p, 1.0, ImplicitSolver::Newton).unwrap();
        assert!((closed.terminal() - prod).abs() < 1e-12 * prod);
        for (a, b) in closed.values.iter().zip(&newton.values) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        assert!(newton.newton_iterations.unwrap().iter().all(|&i| (1..NEWTON_MAX_ITER).contains(&i)));
    }

    #[test]
    fn crank_nicholson_residual() {
        let c = Coefficients::bounded_smooth(1.0, 0.7, 0.0).unwrap();
        let p = path(0.4, 512, 5);
        let r = crank_nicholson_path(&c, &p, 0.3).unwrap();
        for k in 0..512 {
            let db = p.increment(k);
            let rhs = r.values[k] + 0.5 * db * c.sigma(r.values[k]);
            let x = r.values[k + 1];
            assert!((x - 0.5 * db * c.sigma(x) - rhs).abs() < 1e-13 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn crank_nicholson_rejects_large_increment() {
        let c = Coefficients::linear(1.0, 0.0);
        let p = FbmPath::from_increments(&[0.5, 2.5, 0.1], HurstParameter::new(0.5).unwrap()).unwrap();
        match crank_nicholson_path(&c, &p, 1.0) {
            Err(Error::StepNotInvertible { step, .. }) => assert_eq!(step, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(crank_nicholson_path(&Coefficients::linear(1.0, 0.3), &p, 1.0).is_err());
    }

    #[test]
    fn newton_failure_is_reported() {
        // g(x) = x - ½ΔB σ(x) - rhs has no root when σ grows faster than linearly
        let c = Coefficients::custom(CustomCoefficients {
            name: "exp".into(),
            sigma: Arc::new(|x: f64| x.exp()),
            dsigma: Arc::new(|x: f64| x.exp()),
            d2sigma: Arc::new(|x: f64| x.exp()),
            drift: None,
            dsigma_bound: None,
        });
        let p = FbmPath::from_increments(&[2.0], HurstParameter::new(0.5).unwrap()).unwrap();
        assert!(matches!(crank_nicholson_path(&c, &p, 1.0), Err(Error::NewtonDivergence { step: 0 })));
    }

    #[test]
    fn euler_reports_sigma_domain() {
        let c = Coefficients::quadratic_sigma_sq(-1.0, 0.0, 1.0).unwrap();
        let p = FbmPath::from_increments(&[1.5, 1.0], HurstParameter::new(0.5).unwrap()).unwrap();
        assert!(matches!(euler_path(&c, &p, 0.5), Err(Error::SigmaDomain(_))));
    }

    #[test]
    fn csv_layout() {
        let p = line(4);
        let r = euler_path(&Coefficients::constant(1.0), &p, 0.0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, Some(p.values())).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,X_scheme,X_reference,error");
        assert_eq!(text.lines().count(), 6);
    }
}
