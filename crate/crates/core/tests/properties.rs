//! Property tests of the invariants that hold path by path.

use proptest::prelude::*;

use fbm_sde::coefficients::Coefficients;
use fbm_sde::fbm::{FbmSampler, HurstParameter};
use fbm_sde::flow::{solve_reference, FlowMap, DEFAULT_REFINEMENT};
use fbm_sde::malliavin::DerivativeField;
use fbm_sde::output::fmt_f64;
use fbm_sde::rng::{stream, Purpose, SeedTag};
use fbm_sde::schemes::{crank_nicholson_path, euler_path};
use fbm_sde::stats::{ks_two_sample, mean};

fn path(h: f64, n: usize, seed: u64) -> fbm_sde::FbmPath {
    let sampler = FbmSampler::equidistant(HurstParameter::new(h).unwrap(), n).unwrap();
    sampler.sample_tagged(SeedTag::new(seed, Purpose::Auxiliary, 0))
}

fn smooth() -> Coefficients {
    Coefficients::bounded_smooth(1.0, 0.5, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_format_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn flow_at_zero_is_identity(x in -5.0..5.0f64) {
        for coeffs in [smooth(), Coefficients::quadratic_sigma_sq(1.0, 0.0, 0.5).unwrap(), Coefficients::linear(0.7, 0.0)] {
            prop_assert_eq!(FlowMap::new(coeffs).phi(x, 0.0).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn flow_semigroup(x in -2.0..2.0f64, a in -1.5..1.5f64, b in -1.5..1.5f64) {
        for coeffs in [smooth(), Coefficients::quadratic_sigma_sq(1.0, 0.0, 0.5).unwrap()] {
            let flow = FlowMap::new(coeffs);
            let two_steps = flow.phi(flow.phi(x, a).unwrap(), b).unwrap();
            let one_step = flow.phi(x, a + b).unwrap();
            prop_assert!((two_steps - one_step).abs() <= 1e-9 * (1.0 + one_step.abs()), "{two_steps} vs {one_step}");
        }
    }

    #[test]
    fn restriction_keeps_coarse_points(seed in any::<u64>(), h in 0.1..0.9f64) {
        let fine = path(h, 256, seed);
        for n in [128, 32, 4] {
            let coarse = fine.restrict(n).unwrap();
            let stride = 256 / n;
            for (k, v) in coarse.values().iter().enumerate() {
                prop_assert_eq!(v.to_bits(), fine.values()[k * stride].to_bits());
            }
        }
    }

    #[test]
    fn crank_nicholson_solves_its_step_equation(seed in any::<u64>(), h in 0.3..0.8f64) {
        let coeffs = smooth();
        let p = path(h, 128, seed);
        let result = crank_nicholson_path(&coeffs, &p, 0.3).unwrap();
        for k in 0..128 {
            let (x, y) = (result.values[k], result.values[k + 1]);
            let residual = y - x - 0.5 * (coeffs.sigma(x) + coeffs.sigma(y)) * p.increment(k);
            prop_assert!(residual.abs() <= 1e-12 * (1.0 + y.abs()), "step {k}: residual {residual:e}");
        }
    }

    #[test]
    fn euler_is_exact_for_constant_diffusion(seed in any::<u64>(), c in -2.0..2.0f64) {
        let coeffs = Coefficients::constant(c);
        let p = path(0.6, 64, seed);
        let result = euler_path(&coeffs, &p, 1.0).unwrap();
        for (x, b) in result.values.iter().zip(p.values()) {
            prop_assert!((x - (1.0 + c * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn malliavin_derivative_cocycle(seed in any::<u64>(), h in 0.3..0.8f64, i in 0usize..64, j in 0usize..64, k in 0usize..64) {
        let coeffs = smooth();
        let p = path(h, 64, seed);
        let reference = solve_reference(&FlowMap::new(coeffs.clone()), &p, 0.2, DEFAULT_REFINEMENT).unwrap();
        let field = DerivativeField::new(&reference, &coeffs);
        let mut idx = [i, j, k];
        idx.sort_unstable();
        let [s, t, u] = idx;
        let x = reference.x_values();
        // σ > 0 everywhere, so the derivative is positive
        prop_assert!(field.get(s, u).unwrap() > 0.0);
        prop_assert!((field.get(t, t).unwrap() - coeffs.sigma(x[t])).abs() < 1e-15);
        // D_sX_u·σ(X_t) = D_sX_t·D_tX_u
        let lhs = field.get(s, u).unwrap() * coeffs.sigma(x[t]);
        let rhs = field.get(s, t).unwrap() * field.get(t, u).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs());
    }

    #[test]
    fn ks_statistic_is_symmetric_and_bounded(a in prop::collection::vec(-5.0..5.0f64, 2..60), b in prop::collection::vec(-5.0..5.0f64, 2..60)) {
        let ab = ks_two_sample(&a, &b);
        let ba = ks_two_sample(&b, &a);
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ks_two_sample(&a, &a).statistic, 0.0);
    }
}

fn null_p_values(seed: u64, repeats: u64, size: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let draw = |index: u64| -> Vec<f64> {
        let mut rng = stream(seed, Purpose::Auxiliary, index);
        (0..size).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    (0..repeats).map(|i| ks_two_sample(&draw(2 * i), &draw(2 * i + 1)).p_value).collect()
}

#[test]
fn ks_p_values_are_not_small_under_the_null() {
    let p = null_p_values(77, 10, 2000);
    assert!(p.iter().all(|&x| x > 1e-3), "{p:?}");
}

#[test]
fn ks_p_values_are_uniform_under_the_null() {
    let p = null_p_values(78, 400, 1000);
    let below = |t: f64| p.iter().filter(|&&x| x <= t).count() as f64 / p.len() as f64;
    // the discrete statistic makes the test slightly conservative
    for t in [0.1, 0.25, 0.5, 0.75] {
        assert!((below(t) - t).abs() < 0.08, "P(p <= {t}) = {}", below(t));
    }
    assert!((mean(&p) - 0.5).abs() < 0.05, "mean p {}", mean(&p));
}
