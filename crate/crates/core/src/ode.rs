//! Adaptive Dormand–Prince 5(4) integration of the flow `y' = σ(y)`, carrying
//! `ℓ' = σ'(y)` alongside so that `∂φ/∂x₁ = exp(ℓ)`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { atol: 1e-12, rtol: 1e-12, max_steps: 1_000_000 }
    }
}

/// `(y, ℓ)` or its derivative.
type Pair = (f64, f64);

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates the autonomous system `(y, ℓ)' = field(y)` from `u = 0` through
/// `targets`, which must be monotone in one direction starting from 0. Calls
/// `emit(i, y, ℓ)` as each target is reached.
pub(crate) fn sweep<F, E>(field: F, y0: f64, targets: &[f64], tol: Tolerance, mut emit: E) -> Result<()>
where
    F: Fn(f64) -> (f64, f64),
    E: FnMut(usize, f64, f64),
{
    let dir = match targets.iter().find(|&&t| t != 0.0) {
        Some(t) => t.signum(),
        None => {
            for i in 0..targets.len() {
                emit(i, y0, 0.0);
            }
            return Ok(());
        }
    };
    let eval = |y: f64| -> Result<(f64, f64)> {
        let (a, b) = field(y);
        if a.is_finite() && b.is_finite() {
            Ok((a, b))
        } else {
            Err(Error::SigmaDomain(y))
        }
    };

    let mut u = 0.0f64;
    let mut y = y0;
    let mut l = 0.0f64;
    let mut k1 = eval(y)?;
    let mut h = dir * 0.05;
    let mut steps = 0usize;

    for (i, &target) in targets.iter().enumerate() {
        debug_assert!(dir * (target - u) >= 0.0, "targets must be monotone");
        while u != target {
            if steps >= tol.max_steps {
                return Err(Error::FlowStepOverflow { u, y, max_steps: tol.max_steps });
            }
            steps += 1;
            let last = dir * (u + h - target) >= 0.0;
            let hs = if last { target - u } else { h };

            let attempt = || -> Result<(Pair, [Pair; 6])> {
                let k2 = eval(stage(y, l, hs, &[(A21, k1)]).0)?;
                let k3 = eval(stage(y, l, hs, &[(A31, k1), (A32, k2)]).0)?;
                let k4 = eval(stage(y, l, hs, &[(A41, k1), (A42, k2), (A43, k3)]).0)?;
                let k5 = eval(stage(y, l, hs, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]).0)?;
                let k6 = eval(stage(y, l, hs, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]).0)?;
                let next = stage(y, l, hs, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
                let k7 = eval(next.0)?;
                Ok((next, [k2, k3, k4, k5, k6, k7]))
            };
            // a stage leaving the domain of σ is treated as a rejected step
            let Ok((next, [_, k3, k4, k5, k6, k7])) = attempt() else {
                h *= 0.25;
                if h.abs() < f64::EPSILON * u.abs().max(1e-300) {
                    return Err(Error::SigmaDomain(y));
                }
                continue;
            };
            let err_y = hs * (E1 * k1.0 + E3 * k3.0 + E4 * k4.0 + E5 * k5.0 + E6 * k6.0 + E7 * k7.0);
            let err_l = hs * (E1 * k1.1 + E3 * k3.1 + E4 * k4.1 + E5 * k5.1 + E6 * k6.1 + E7 * k7.1);
            let sc_y = tol.atol + tol.rtol * y.abs().max(next.0.abs());
            let sc_l = tol.atol + tol.rtol * l.abs().max(next.1.abs());
            let err = (err_y.abs() / sc_y).max(err_l.abs() / sc_l);

            if err <= 1.0 {
                u = if last { target } else { u + hs };
                y = next.0;
                l = next.1;
                k1 = k7;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the proposed size when a target clipped the step
                if !last || hs.abs() >= h.abs() * 0.5 {
                    h *= fac;
                }
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h == 0.0 || !h.is_finite() {
                return Err(Error::FlowStepOverflow { u, y, max_steps: tol.max_steps });
            }
        }
        emit(i, y, l);
    }
    Ok(())
}

#[inline]
fn stage(y: f64, l: f64, h: f64, terms: &[(f64, (f64, f64))]) -> (f64, f64) {
    let mut dy = 0.0;
    let mut dl = 0.0;
    for &(a, (ky, kl)) in terms {
        dy += a * ky;
        dl += a * kl;
    }
    (y + h * dy, l + h * dl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let mut out = Vec::new();
        sweep(|y| (y, 1.0), 1.5, &[0.5, 1.0, 2.0], Tolerance::default(), |_, y, l| out.push((y, l))).unwrap();
        for (&(y, l), t) in out.iter().zip([0.5f64, 1.0, 2.0]) {
            assert!((y - 1.5 * t.exp()).abs() < 1e-10 * t.exp());
            assert!((l - t).abs() < 1e-11);
        }
    }

    #[test]
    fn backwards_and_zero_targets() {
        let mut out = Vec::new();
        sweep(|y| (y, 1.0), 2.0, &[0.0, -1.0], Tolerance::default(), |i, y, _| out.push((i, y))).unwrap();
        assert_eq!(out[0], (0, 2.0));
        assert!((out[1].1 - 2.0 * (-1f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn blow_up_is_reported() {
        // y' = y^2 explodes at u = 1
        let tol = Tolerance { max_steps: 10_000, ..Tolerance::default() };
        let err = sweep(|y| (y * y, 2.0 * y), 1.0, &[2.0], tol, |_, _, _| {}).unwrap_err();
        assert!(matches!(err, Error::FlowStepOverflow { .. } | Error::SigmaDomain(_)));
    }
}
