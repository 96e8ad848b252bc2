//! The flow `φ` of `σ` and reference solutions `X_t = φ(A_t, B_t)`.
//!
//! `φ(x₁, ·)` solves `y' = σ(y)`, `y(0) = x₁`. The drift enters through the
//! path-by-path ODE `A' = b(φ(A, B_t)) / ∂₁φ(A, B_t)`, `A_0 = x₀`.

use std::io::Write;

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, Grid};
use crate::ode::{self, Tolerance};

/// Closed forms of `φ`, selected from the coefficient family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosedForm {
    /// `σ(x) = slope·(x - center)`: `φ = center + (x₁ - center)·e^{slope·x₂}`.
    Affine { slope: f64, center: f64 },
    /// `σ ≡ c`: `φ = x₁ + c·x₂`.
    Constant(f64),
    /// `σ(x) = sign·sqrt(α)·sqrt((x - center)^2 + r^2)`:
    /// `φ = center + r·sinh(rate·x₂ + asinh((x₁ - center)/r))` with `rate = sign·sqrt(α)`.
    Sinh { rate: f64, center: f64, r: f64 },
}

/// `φ` and `∂₁φ` for a fixed set of coefficients.
#[derive(Clone, Debug)]
pub struct FlowMap {
    coefficients: Coefficients,
    closed_form: Option<ClosedForm>,
    tolerance: Tolerance,
}

impl FlowMap {
    pub fn new(coefficients: Coefficients) -> Self {
        let closed_form = detect_closed_form(&coefficients);
        Self { coefficients, closed_form, tolerance: Tolerance::default() }
    }

    /// Same coefficients, always using the adaptive integrator.
    pub fn numerical(coefficients: Coefficients) -> Self {
        Self { coefficients, closed_form: None, tolerance: Tolerance::default() }
    }

    /// Overrides the integrator tolerances (absolute and relative) and step budget.
    pub fn with_tolerance(mut self, tol: f64, max_steps: usize) -> Self {
        self.tolerance = Tolerance { atol: tol, rtol: tol, max_steps };
        self
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn closed_form(&self) -> Option<ClosedForm> {
        self.closed_form
    }

    pub fn phi(&self, x1: f64, x2: f64) -> Result<f64> {
        Ok(self.phi_and_log_dphi(x1, x2)?.0)
    }

    pub fn dphi_dx1(&self, x1: f64, x2: f64) -> Result<f64> {
        Ok(self.phi_and_log_dphi(x1, x2)?.1.exp())
    }

    /// `(φ(x₁, x₂), ln ∂₁φ(x₁, x₂))`.
    pub fn phi_and_log_dphi(&self, x1: f64, x2: f64) -> Result<(f64, f64)> {
        if x2 == 0.0 {
            return Ok((x1, 0.0));
        }
        if let Some(cf) = self.closed_form {
            return Ok(cf.eval(x1, x2));
        }
        let mut out = (f64::NAN, f64::NAN);
        self.integrate(x1, &[x2], |_, y, l| out = (y, l))?;
        Ok(out)
    }

    /// `φ(x₁, x₂)` and `ln ∂₁φ(x₁, x₂)` for every `x₂` in `targets`, in one pass of
    /// the integrator per sign of `x₂`.
    pub fn phi_sweep(&self, x1: f64, targets: &[f64]) -> Result<Vec<(f64, f64)>> {
        if let Some(cf) = self.closed_form {
            return Ok(targets
                .iter()
                .map(|&x2| if x2 == 0.0 { (x1, 0.0) } else { cf.eval(x1, x2) })
                .collect());
        }
        let mut out = vec![(x1, 0.0); targets.len()];
        for positive in [true, false] {
            let mut idx: Vec<usize> = (0..targets.len())
                .filter(|&i| if positive { targets[i] > 0.0 } else { targets[i] < 0.0 })
                .collect();
            if idx.is_empty() {
                continue;
            }
            idx.sort_by(|&a, &b| targets[a].abs().total_cmp(&targets[b].abs()));
            let sorted: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            self.integrate(x1, &sorted, |j, y, l| out[idx[j]] = (y, l))?;
        }
        Ok(out)
    }

    fn integrate<E: FnMut(usize, f64, f64)>(&self, x1: f64, targets: &[f64], emit: E) -> Result<()> {
        let c = &self.coefficients;
        ode::sweep(|y| (c.sigma(y), c.dsigma(y)), x1, targets, self.tolerance, emit)
    }
}

impl ClosedForm {
    fn eval(self, x1: f64, x2: f64) -> (f64, f64) {
        match self {
            ClosedForm::Affine { slope, center } => {
                let l = slope * x2;
                (center + (x1 - center) * l.exp(), l)
            }
            ClosedForm::Constant(c) => (x1 + c * x2, 0.0),
            ClosedForm::Sinh { rate, center, r } => {
                let w0 = ((x1 - center) / r).asinh();
                let w = rate * x2 + w0;
                (center + r * w.sinh(), ln_cosh(w) - ln_cosh(w0))
            }
        }
    }
}

fn ln_cosh(w: f64) -> f64 {
    let a = w.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn detect_closed_form(c: &Coefficients) -> Option<ClosedForm> {
    if let Some(k) = c.constant_sigma() {
        return Some(ClosedForm::Constant(k));
    }
    if let Some((slope, center)) = c.affine_sigma() {
        return Some(ClosedForm::Affine { slope, center });
    }
    let (alpha, beta, gamma, sign) = c.root_sigma()?;
    if alpha <= 0.0 {
        return None;
    }
    let disc = gamma - beta * beta / (4.0 * alpha);
    (disc > 0.0).then(|| ClosedForm::Sinh {
        rate: sign * alpha.sqrt(),
        center: -beta / (2.0 * alpha),
        r: (disc / alpha).sqrt(),
    })
}

/// Grid values of the solution and of the drift process `A` along one fBm path.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    grid: Grid,
    x_values: Vec<f64>,
    a_values: Vec<f64>,
    /// `ln ∂₁φ(x₀, B_t)` on the grid, available when `b ≡ 0`.
    log_dphi: Option<Vec<f64>>,
    driving_path: FbmPath,
    x0: f64,
}

impl ReferenceSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a_values
    }

    pub fn log_dphi(&self) -> Option<&[f64]> {
        self.log_dphi.as_deref()
    }

    pub fn driving_path(&self) -> &FbmPath {
        &self.driving_path
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn terminal(&self) -> f64 {
        self.x_values[self.x_values.len() - 1]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,B,A,X")?;
        for (k, t) in self.grid.points().iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                crate::output::fmt_f64(*t),
                crate::output::fmt_f64(self.driving_path.values()[k]),
                crate::output::fmt_f64(self.a_values[k]),
                crate::output::fmt_f64(self.x_values[k])
            )?;
        }
        Ok(())
    }
}

pub const DEFAULT_REFINEMENT: usize = 8;

/// Solves the equation along `path` through `X_t = φ(A_t, B_t)`.
///
/// With `b ≡ 0`, `A ≡ x₀` and no ODE is solved. Otherwise the `A`-equation is
/// integrated with classical RK4 on the grid refined `refinement` times, with
/// `B` interpolated linearly between grid points.
pub fn solve_reference(flow: &FlowMap, path: &FbmPath, x0: f64, refinement: usize) -> Result<ReferenceSolution> {
    let grid = path.grid().clone();
    grid.require_equidistant()?;
    if refinement == 0 {
        return Err(Error::Config("refinement must be at least 1".into()));
    }
    let n = grid.n();
    let b = path.values();
    let coeffs = flow.coefficients();

    if coeffs.has_zero_drift() {
        let sweep = flow.phi_sweep(x0, b)?;
        let (x_values, log_dphi): (Vec<f64>, Vec<f64>) = sweep.into_iter().unzip();
        for &x in &x_values {
            if x.is_nan() {
                return Err(Error::SigmaDomain(x));
            }
        }
        return Ok(ReferenceSolution {
            grid,
            x_values,
            a_values: vec![x0; n + 1],
            log_dphi: Some(log_dphi),
            driving_path: path.clone(),
            x0,
        });
    }

    let rhs = |a: f64, bt: f64| -> Result<f64> {
        let (x, l) = flow.phi_and_log_dphi(a, bt)?;
        Ok(coeffs.drift(x) * (-l).exp())
    };
    let h = 1.0 / (n * refinement) as f64;
    let mut a_values = Vec::with_capacity(n + 1);
    let mut x_values = Vec::with_capacity(n + 1);
    let mut a = x0;
    a_values.push(a);
    x_values.push(x0);
    for k in 0..n {
        let (b0, b1) = (b[k], b[k + 1]);
        let interp = |frac: f64| b0 + (b1 - b0) * frac;
        for j in 0..refinement {
            let f0 = j as f64 / refinement as f64;
            let fh = (j as f64 + 0.5) / refinement as f64;
            let f1 = (j + 1) as f64 / refinement as f64;
            let k1 = rhs(a, interp(f0))?;
            let k2 = rhs(a + 0.5 * h * k1, interp(fh))?;
            let k3 = rhs(a + 0.5 * h * k2, interp(fh))?;
            let k4 = rhs(a + h * k3, interp(f1))?;
            a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        a_values.push(a);
        x_values.push(flow.phi(a, b1)?);
    }
    Ok(ReferenceSolution { grid, x_values, a_values, log_dphi: None, driving_path: path.clone(), x0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CustomCoefficients;
    use crate::fbm::{FbmSampler, HurstParameter};
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use std::sync::Arc;

    fn sine_custom() -> Coefficients {
        Coefficients::custom(CustomCoefficients {
            name: "sin".into(),
            sigma: Arc::new(|x: f64| 1.0 + 0.5 * x.sin()),
            dsigma: Arc::new(|x: f64| 0.5 * x.cos()),
            d2sigma: Arc::new(|x: f64| -0.5 * x.sin()),
            drift: None,
            dsigma_bound: Some(0.5),
        })
    }

    #[test]
    fn closed_forms_of_trivial_flows() {
        let f = FlowMap::new(Coefficients::linear(1.0, 0.0));
        assert!((f.phi(2.0, 0.3).unwrap() - 2.0 * 0.3f64.exp()).abs() < 1e-15);
        assert!((f.dphi_dx1(2.0, 0.3).unwrap() - 0.3f64.exp()).abs() < 1e-15);
        let f = FlowMap::new(Coefficients::constant(2.5));
        assert_eq!(f.phi(1.0, 0.4).unwrap(), 2.0);
        assert_eq!(f.dphi_dx1(1.0, 0.4).unwrap(), 1.0);
    }

    #[test]
    fn identity_at_zero_is_exact() {
        for flow in [
            FlowMap::new(Coefficients::linear(1.3, 0.0)),
            FlowMap::new(Coefficients::quadratic_sigma_sq(1.0, 0.3, 2.0).unwrap()),
            FlowMap::new(sine_custom()),
        ] {
            for x in [-1.7, 0.0, 0.1, 3.3] {
                assert_eq!(flow.phi(x, 0.0).unwrap().to_bits(), x.to_bits());
            }
        }
    }

    #[test]
    fn sinh_closed_form_matches_integrator() {
        for (alpha, beta, gamma) in [(1.0, 0.0, 1.0), (2.0, -1.0, 3.0), (0.5, 1.0, 4.0)] {
            let c = Coefficients::quadratic_sigma_sq(alpha, beta, gamma).unwrap();
            let exact = FlowMap::new(c.clone());
            assert!(matches!(exact.closed_form(), Some(ClosedForm::Sinh { .. })));
            let numeric = FlowMap::numerical(c);
            for (x1, x2) in [(0.3, 0.7), (-1.0, -0.5), (2.0, 1.2), (0.0, -1.5)] {
                let (p, l) = exact.phi_and_log_dphi(x1, x2).unwrap();
                let (q, m) = numeric.phi_and_log_dphi(x1, x2).unwrap();
                assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()), "{p} vs {q}");
                assert!((l - m).abs() < 1e-9, "{l} vs {m}");
            }
        }
    }

    #[test]
    fn semigroup_of_numerical_flow() {
        let flow = FlowMap::new(sine_custom());
        let mut rng = stream(7, Purpose::Auxiliary, 0);
        for _ in 0..100 {
            let x1 = rng.random_range(-3.0..3.0);
            let y = rng.random_range(-1.0..1.0);
            let x2 = rng.random_range(-1.0..1.0);
            let lhs = flow.phi(flow.phi(x1, y).unwrap(), x2 - y).unwrap();
            let rhs = flow.phi(x1, x2).unwrap();
            assert!((lhs - rhs).abs() < 1e-11, "{lhs} vs {rhs}");
        }
        let x1 = 0.4;
        let lhs = flow.phi(flow.phi(x1, 0.3).unwrap(), 0.7).unwrap();
        let tight = FlowMap::new(sine_custom()).with_tolerance(1e-14, 1_000_000);
        assert!((lhs - tight.phi(x1, 1.0).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn reciprocity_of_dphi() {
        let flows = [
            FlowMap::new(sine_custom()),
            FlowMap::new(Coefficients::quadratic_sigma_sq(1.0, 0.2, 0.5).unwrap()),
            FlowMap::new(Coefficients::bounded_smooth(1.0, 0.5, 0.0).unwrap()),
        ];
        for flow in &flows {
            for (x1, x2) in [(0.2, 0.9), (-1.0, -0.4), (1.5, 0.3)] {
                let fwd = flow.dphi_dx1(x1, x2).unwrap();
                let back = flow.dphi_dx1(flow.phi(x1, x2).unwrap(), -x2).unwrap();
                assert!((fwd * back - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dphi_is_sigma_ratio() {
        let flow = FlowMap::new(Coefficients::bounded_smooth(1.0, 0.6, 0.0).unwrap());
        let c = flow.coefficients().clone();
        let (x1, x2) = (0.3, 1.1);
        let y = flow.phi(x1, x2).unwrap();
        assert!((flow.dphi_dx1(x1, x2).unwrap() - c.sigma(y) / c.sigma(x1)).abs() < 1e-10);
    }

    #[test]
    fn sweep_matches_pointwise() {
        let flow = FlowMap::new(sine_custom());
        let targets = [0.5, -0.2, 0.0, 1.3, -0.9, 0.5];
        let sweep = flow.phi_sweep(0.7, &targets).unwrap();
        for (t, (p, l)) in targets.iter().zip(sweep) {
            let (q, m) = flow.phi_and_log_dphi(0.7, *t).unwrap();
            assert!((p - q).abs() < 1e-11 && (l - m).abs() < 1e-11);
        }
    }

    #[test]
    fn overflow_carries_escape_point() {
        let c = Coefficients::custom(CustomCoefficients {
            name: "square".into(),
            sigma: Arc::new(|x: f64| x * x),
            dsigma: Arc::new(|x: f64| 2.0 * x),
            d2sigma: Arc::new(|_| 2.0),
            drift: None,
            dsigma_bound: None,
        });
        let flow = FlowMap::new(c).with_tolerance(1e-12, 5_000);
        match flow.phi(1.0, 2.0) {
            Err(Error::FlowStepOverflow { y, .. }) => assert!(y > 1.0),
            Err(Error::SigmaDomain(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn path(h: f64, n: usize, index: u64) -> FbmPath {
        let mut rng = stream(11, Purpose::FbmPath, index);
        FbmSampler::equidistant(HurstParameter::new(h).unwrap(), n).unwrap().sample(&mut rng)
    }

    #[test]
    fn linear_reference_matches_closed_form() {
        let (gamma, beta, x0) = (1.0, 0.5, 1.0);
        let flow = FlowMap::new(Coefficients::linear(gamma, beta));
        for i in 0..3 {
            let p = path(0.7, 256, i);
            let r = solve_reference(&flow, &p, x0, DEFAULT_REFINEMENT).unwrap();
            for (k, t) in p.grid().points().iter().enumerate() {
                let exact = x0 * (beta * t + gamma * p.values()[k]).exp();
                assert!((r.x_values()[k] - exact).abs() < 1e-8 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_drift_reference_is_flow_of_path() {
        let flow = FlowMap::new(Coefficients::linear(1.0, 0.0));
        let p = path(0.4, 128, 0);
        let r = solve_reference(&flow, &p, 2.0, 1).unwrap();
        assert!(r.a_values().iter().all(|&a| a == 2.0));
        assert_eq!(r.terminal(), 2.0 * p.terminal().exp());
        assert_eq!(r.x_values()[0], 2.0);
    }

    #[test]
    fn refinement_stability_with_drift() {
        let flow = FlowMap::new(Coefficients::bounded_smooth(1.0, 0.4, 0.8).unwrap());
        let p = path(0.6, 64, 3);
        let a = solve_reference(&flow, &p, 0.2, 4).unwrap().terminal();
        let b = solve_reference(&flow, &p, 0.2, 8).unwrap().terminal();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        assert!(a.is_finite());
    }
}
