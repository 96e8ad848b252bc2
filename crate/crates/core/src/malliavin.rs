//! Malliavin derivative of the solution and the almost-sure limits of the Euler error.
//!
//! `D_sX_t = σ(X_s)·exp(L_t - L_s)` with `L_t = ∫₀ᵗ b'(X_u)du + ∫₀ᵗ σ'(X_u)d⁻B_u`.
//! The field is stored through the grid values of `L` only, so memory is `O(n)`.

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::fbm::{FbmPath, Grid};
use crate::flow::ReferenceSolution;

/// Left-point sum `Σ_{s ≤ i < t} f(i/n)·ΔB_i`.
pub fn young_integral(f_values: &[f64], path: &FbmPath, s_index: usize, t_index: usize) -> Result<f64> {
    if s_index > t_index {
        return Err(Error::IndexOrder { s: s_index, t: t_index });
    }
    if t_index > path.n() || f_values.len() < t_index {
        return Err(Error::Domain(format!("index {t_index} beyond grid of size {}", path.n())));
    }
    let b = path.values();
    Ok((s_index..t_index).map(|i| f_values[i] * (b[i + 1] - b[i])).sum())
}

/// How `∫σ'(X_u)d⁻B_u` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DbIntegral {
    /// Left-point Riemann sum on the grid; meaningful for `H > 1/2`.
    LeftPoint,
    /// For `b ≡ 0`: `∫₀ᵗσ'(X_u)d⁻B_u = ln ∂₁φ(x₀, B_t)`, exact for every `H`.
    ChangeOfVariable,
}

/// `D_sX_t` on the grid, for `s ≤ t`.
#[derive(Clone, Debug)]
pub struct DerivativeField {
    grid: Grid,
    sigma: Vec<f64>,
    log_weight: Vec<f64>,
    rule: DbIntegral,
}

impl DerivativeField {
    /// Uses the change-of-variable rule when the reference carries `ln ∂₁φ`
    /// (that is, `b ≡ 0`), and the left-point rule otherwise.
    pub fn new(reference: &ReferenceSolution, coeffs: &Coefficients) -> Self {
        let rule = if reference.log_dphi().is_some() {
            DbIntegral::ChangeOfVariable
        } else {
            DbIntegral::LeftPoint
        };
        Self::with_rule(reference, coeffs, rule).expect("rule available")
    }

    pub fn with_rule(reference: &ReferenceSolution, coeffs: &Coefficients, rule: DbIntegral) -> Result<Self> {
        let x = reference.x_values();
        let n = reference.n();
        let dt = 1.0 / n as f64;
        let log_weight = match rule {
            DbIntegral::ChangeOfVariable => reference
                .log_dphi()
                .ok_or_else(|| Error::Config("change of variable needs b = 0".into()))?
                .to_vec(),
            DbIntegral::LeftPoint => {
                let b = reference.driving_path().values();
                let mut l = Vec::with_capacity(n + 1);
                let mut acc = 0.0;
                l.push(acc);
                let mut db_prev = coeffs.ddrift(x[0]);
                for i in 0..n {
                    let db_next = coeffs.ddrift(x[i + 1]);
                    acc += 0.5 * (db_prev + db_next) * dt + coeffs.dsigma(x[i]) * (b[i + 1] - b[i]);
                    db_prev = db_next;
                    l.push(acc);
                }
                l
            }
        };
        Ok(Self {
            grid: reference.grid().clone(),
            sigma: x.iter().map(|&v| coeffs.sigma(v)).collect(),
            log_weight,
            rule,
        })
    }

    pub fn rule(&self) -> DbIntegral {
        self.rule
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `D_{i/n}X_{k/n}`.
    pub fn get(&self, i: usize, k: usize) -> Result<f64> {
        if i > k {
            return Err(Error::IndexOrder { s: i, t: k });
        }
        if i == k {
            return Ok(self.sigma[k]);
        }
        Ok(self.sigma[i] * (self.log_weight[k] - self.log_weight[i]).exp())
    }

    /// Dense lower-triangular matrix `m[k][i] = D_{i/n}X_{k/n}`, `i ≤ k`. `O(n²)` memory.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        (0..=self.grid.n())
            .map(|k| (0..=k).map(|i| self.get(i, k).expect("i <= k")).collect())
            .collect()
    }

    /// `∫₀^{t_k} σ'(X_s)D_sX_{t_k}ds` for every grid index `k`, by the trapezoidal rule.
    fn integral_profile(&self, reference: &ReferenceSolution, coeffs: &Coefficients) -> Vec<f64> {
        let x = reference.x_values();
        let n = self.grid.n();
        let dt = 1.0 / n as f64;
        // ∫₀ᵗ σ'(X_s)σ(X_s)e^{-L_s}ds · e^{L_t}, shifted by L_k for stability
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut l_ref = self.log_weight[0];
        let g = |i: usize, shift: f64| coeffs.dsigma(x[i]) * self.sigma[i] * (shift - self.log_weight[i]).exp();
        out.push(0.0);
        for k in 1..=n {
            let shift = self.log_weight[k];
            // rescale the running sum from e^{L_{k-1}} to e^{L_k}
            acc *= (shift - l_ref).exp();
            l_ref = shift;
            acc += 0.5 * (g(k - 1, shift) + g(k, shift)) * dt;
            out.push(acc);
        }
        out
    }
}

/// `D_{s}X_{t}` at grid indices `s_index ≤ t_index`.
pub fn malliavin_derivative(
    reference: &ReferenceSolution,
    coeffs: &Coefficients,
    s_index: usize,
    t_index: usize,
) -> Result<f64> {
    if s_index > t_index {
        return Err(Error::IndexOrder { s: s_index, t: t_index });
    }
    DerivativeField::new(reference, coeffs).get(s_index, t_index)
}

/// `-½∫₀ᵗ σ'(X_s)D_sX_t ds` at `t = t_index/n`: the almost-sure limit of
/// `n^{2H-1}(X̄ⁿ_t - X_t)` for the Euler scheme.
pub fn euler_limit_functional(reference: &ReferenceSolution, coeffs: &Coefficients, t_index: usize) -> Result<f64> {
    if t_index > reference.n() {
        return Err(Error::Domain(format!("index {t_index} beyond grid of size {}", reference.n())));
    }
    Ok(euler_limit_profile(reference, coeffs)[t_index])
}

/// `euler_limit_functional` at every grid index.
pub fn euler_limit_profile(reference: &ReferenceSolution, coeffs: &Coefficients) -> Vec<f64> {
    let field = DerivativeField::new(reference, coeffs);
    field.integral_profile(reference, coeffs).into_iter().map(|v| -0.5 * v).collect()
}

/// `½·max_k |∫₀^{k/n} σ'(X_s)D_sX_{k/n}ds|`, the limit of `n^{2H-1}‖X̄ⁿ - X‖_∞`.
pub fn euler_limit_sup(reference: &ReferenceSolution, coeffs: &Coefficients) -> f64 {
    euler_limit_profile(reference, coeffs).into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{FbmSampler, HurstParameter};
    use crate::flow::{solve_reference, FlowMap};
    use crate::rng::{stream, Purpose};

    fn path(h: f64, n: usize, index: u64) -> FbmPath {
        let mut rng = stream(3, Purpose::FbmPath, index);
        FbmSampler::equidistant(HurstParameter::new(h).unwrap(), n).unwrap().sample(&mut rng)
    }

    fn reference(c: &Coefficients, p: &FbmPath, x0: f64) -> ReferenceSolution {
        solve_reference(&FlowMap::new(c.clone()), p, x0, 8).unwrap()
    }

    #[test]
    fn young_integral_trivial_cases() {
        let p = path(0.7, 64, 0);
        let ones = vec![1.0; 65];
        let zeros = vec![0.0; 65];
        let v = young_integral(&ones, &p, 10, 40).unwrap();
        assert!((v - (p.values()[40] - p.values()[10])).abs() < 1e-14);
        assert_eq!(young_integral(&zeros, &p, 0, 64).unwrap(), 0.0);
        assert!(matches!(young_integral(&ones, &p, 5, 4), Err(Error::IndexOrder { s: 5, t: 4 })));
    }

    #[test]
    fn young_integral_of_path_against_itself() {
        let n = 1 << 14;
        let h = 0.75;
        let p = path(h, n, 1);
        let v = young_integral(p.values(), &p, 0, n).unwrap();
        let sup = p.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let target = 0.5 * p.terminal().powi(2);
        // the gap is half the quadratic variation, of order n^{1-2H}
        assert!((v - target).abs() < 5.0 * (n as f64).powf(1.0 - 2.0 * h) * sup.max(1.0).powi(2));
    }

    #[test]
    fn diagonal_and_positivity() {
        let c = Coefficients::bounded_smooth(1.0, 0.5, 0.3).unwrap();
        let p = path(0.6, 256, 2);
        let r = reference(&c, &p, 0.1);
        let field = DerivativeField::new(&r, &c);
        assert_eq!(field.rule(), DbIntegral::LeftPoint);
        for k in (0..=256).step_by(17) {
            assert_eq!(field.get(k, k).unwrap(), c.sigma(r.x_values()[k]));
            for i in 0..=k {
                assert!(field.get(i, k).unwrap() > 0.0);
            }
        }
        assert!(field.get(3, 2).is_err());
    }

    #[test]
    fn cocycle() {
        let c = Coefficients::bounded_smooth(1.0, 0.5, 0.3).unwrap();
        let p = path(0.6, 128, 3);
        let r = reference(&c, &p, 0.0);
        let f = DerivativeField::new(&r, &c);
        let m = f.to_matrix();
        let (s, u, t) = (10, 50, 120);
        let factor = m[t][u] / c.sigma(r.x_values()[u]);
        assert!((m[t][s] - m[u][s] * factor).abs() < 1e-12 * m[t][s].abs());
    }

    #[test]
    fn linear_kind_derivative() {
        let (gamma, beta) = (1.0, 0.5);
        let c = Coefficients::linear(gamma, beta);
        let p = path(0.7, 1 << 12, 4);
        let r = reference(&c, &p, 1.0);
        let f = DerivativeField::new(&r, &c);
        for (s, t) in [(0, 4096), (100, 2000), (3000, 4095)] {
            let want = gamma * r.x_values()[t];
            assert!((f.get(s, t).unwrap() / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_drift_derivative_is_sigma_at_t() {
        let c = Coefficients::quadratic_sigma_sq(1.0, 0.0, 1.0).unwrap();
        let p = path(0.3, 1 << 12, 5);
        let r = reference(&c, &p, 0.4);
        let f = DerivativeField::new(&r, &c);
        assert_eq!(f.rule(), DbIntegral::ChangeOfVariable);
        for (s, t) in [(0, 4096), (7, 1999), (4000, 4090)] {
            let want = c.sigma(r.x_values()[t]);
            assert!((f.get(s, t).unwrap() / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_functional_and_sup() {
        let gamma = 1.3;
        let c = Coefficients::linear(gamma, 0.5);
        let p = path(0.7, 1 << 12, 6);
        let r = reference(&c, &p, 1.0);
        let x1 = r.terminal();
        let v = euler_limit_functional(&r, &c, 1 << 12).unwrap();
        assert!((v / (-0.5 * gamma * gamma * x1) - 1.0).abs() < 1e-4);
        let n = 1 << 12;
        let want = (0..=n)
            .map(|k| (k as f64 / n as f64 * r.x_values()[k]).abs())
            .fold(0.0, f64::max)
            * 0.5
            * gamma
            * gamma;
        assert!((euler_limit_sup(&r, &c) / want - 1.0).abs() < 1e-4);
    }

    #[test]
    fn constant_sigma_limits_vanish() {
        let c = Coefficients::constant(0.9);
        let p = path(0.4, 256, 7);
        let r = reference(&c, &p, 0.0);
        assert_eq!(euler_limit_functional(&r, &c, 256).unwrap(), 0.0);
        assert_eq!(euler_limit_sup(&r, &c), 0.0);
    }

    #[test]
    fn zero_drift_functional_direct_form() {
        let c = Coefficients::bounded_smooth(1.0, 0.5, 0.0).unwrap();
        let n = 1 << 10;
        let p = path(0.4, n, 8);
        let r = reference(&c, &p, 0.2);
        let x = r.x_values();
        let trap: f64 = (0..n).map(|i| 0.5 * (c.dsigma(x[i]) + c.dsigma(x[i + 1]))).sum::<f64>() / n as f64;
        let want = -0.5 * c.sigma(x[n]) * trap;
        let got = euler_limit_functional(&r, &c, n).unwrap();
        assert!((got - want).abs() < 1e-6 * want.abs().max(1e-3));
    }
}
