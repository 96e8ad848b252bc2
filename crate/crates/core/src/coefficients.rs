//! Diffusion and drift coefficients `σ`, `b` of `dX = σ(X) dB + b(X) dt`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied coefficients with their derivatives.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub name: String,
    pub sigma: ScalarFn,
    pub dsigma: ScalarFn,
    pub d2sigma: ScalarFn,
    /// `None` means `b ≡ 0`.
    pub drift: Option<(ScalarFn, ScalarFn)>,
    /// `sup |σ'|`, if known.
    pub dsigma_bound: Option<f64>,
}

/// Serializable description of the builtin coefficient families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientSpec {
    /// `σ(x) = γx`, `b(x) = βx`.
    Linear { gamma: f64, beta: f64 },
    /// `σ(x)^2 = αx^2 + βx + γ`, `b ≡ 0`. `sign` picks the branch of the root.
    QuadraticSigmaSq {
        alpha: f64,
        beta: f64,
        gamma: f64,
        #[serde(default = "positive")]
        sign: f64,
    },
    /// `σ(x) = level + amplitude·tanh(x)`, `b(x) = drift·sin(x)`.
    BoundedSmooth {
        level: f64,
        amplitude: f64,
        #[serde(default)]
        drift: f64,
    },
}

fn positive() -> f64 {
    1.0
}

/// Internal representation of the diffusion coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Diffusion {
    /// `σ(x) = slope·(x - center)`.
    Affine { slope: f64, center: f64 },
    Constant(f64),
    /// `σ(x) = sign·sqrt(αx^2 + βx + γ)`.
    Root { alpha: f64, beta: f64, gamma: f64, sign: f64 },
    /// `σ(x) = level + amplitude·tanh(x)`.
    Tanh { level: f64, amplitude: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Drift {
    Zero,
    Linear(f64),
    Sine(f64),
}

/// Which family the coefficients belong to.
#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientKind {
    Linear { gamma: f64, beta: f64 },
    QuadraticSigmaSq { alpha: f64, beta: f64, gamma: f64 },
    BoundedSmooth { level: f64, amplitude: f64, drift: f64 },
    Custom(String),
}

#[derive(Clone)]
enum Repr {
    Builtin { diffusion: Diffusion, drift: Drift },
    Custom(CustomCoefficients),
}

/// The pair `(σ, b)` with first and second derivatives of `σ` and first derivative of `b`.
#[derive(Clone)]
pub struct Coefficients {
    kind: CoefficientKind,
    repr: Repr,
}

impl fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficients").field("kind", &self.kind).finish()
    }
}

impl Coefficients {
    /// `σ(x) = γx`, `b(x) = βx`.
    pub fn linear(gamma: f64, beta: f64) -> Self {
        let diffusion = if gamma == 0.0 {
            Diffusion::Constant(0.0)
        } else {
            Diffusion::Affine { slope: gamma, center: 0.0 }
        };
        let drift = if beta == 0.0 { Drift::Zero } else { Drift::Linear(beta) };
        Self {
            kind: CoefficientKind::Linear { gamma, beta },
            repr: Repr::Builtin { diffusion, drift },
        }
    }

    /// `σ(x) = sign·sqrt(αx^2 + βx + γ)`, `b ≡ 0`.
    ///
    /// When the quadratic is a perfect square (`α > 0`, `β^2 = 4αγ`) the only `C^1`
    /// choice is the affine root `σ(x) = sign·sqrt(α)(x + β/2α)`, which is used
    /// instead; `α = β = 0` gives the constant `sign·sqrt(γ)`.
    pub fn quadratic_sigma_sq(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Self::quadratic_sigma_sq_signed(alpha, beta, gamma, 1.0)
    }

    pub fn quadratic_sigma_sq_signed(alpha: f64, beta: f64, gamma: f64, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::Config(format!("sign must be +1 or -1, got {sign}")));
        }
        let diffusion = if alpha == 0.0 && beta == 0.0 {
            if gamma < 0.0 {
                return Err(Error::SigmaDomain(0.0));
            }
            Diffusion::Constant(sign * gamma.sqrt())
        } else if alpha > 0.0 && beta * beta == 4.0 * alpha * gamma {
            Diffusion::Affine {
                slope: sign * alpha.sqrt(),
                center: -beta / (2.0 * alpha),
            }
        } else {
            Diffusion::Root { alpha, beta, gamma, sign }
        };
        Ok(Self {
            kind: CoefficientKind::QuadraticSigmaSq { alpha, beta, gamma },
            repr: Repr::Builtin { diffusion, drift: Drift::Zero },
        })
    }

    /// Constant diffusion `σ ≡ c`, no drift.
    pub fn constant(c: f64) -> Self {
        Self {
            kind: CoefficientKind::QuadraticSigmaSq { alpha: 0.0, beta: 0.0, gamma: c * c },
            repr: Repr::Builtin { diffusion: Diffusion::Constant(c), drift: Drift::Zero },
        }
    }

    /// `σ(x) = level + amplitude·tanh(x)` with `level > amplitude ≥ 0`, so that
    /// `σ ∈ C_b^∞` and `inf σ = level - amplitude > 0`; `b(x) = drift·sin(x)`.
    pub fn bounded_smooth(level: f64, amplitude: f64, drift: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && level > amplitude) {
            return Err(Error::Config(format!(
                "bounded_smooth needs level > amplitude >= 0, got level {level}, amplitude {amplitude}"
            )));
        }
        Ok(Self {
            kind: CoefficientKind::BoundedSmooth { level, amplitude, drift },
            repr: Repr::Builtin {
                diffusion: Diffusion::Tanh { level, amplitude },
                drift: if drift == 0.0 { Drift::Zero } else { Drift::Sine(drift) },
            },
        })
    }

    pub fn custom(c: CustomCoefficients) -> Self {
        Self {
            kind: CoefficientKind::Custom(c.name.clone()),
            repr: Repr::Custom(c),
        }
    }

    pub fn from_spec(spec: &CoefficientSpec) -> Result<Self> {
        match *spec {
            CoefficientSpec::Linear { gamma, beta } => Ok(Self::linear(gamma, beta)),
            CoefficientSpec::QuadraticSigmaSq { alpha, beta, gamma, sign } => {
                Self::quadratic_sigma_sq_signed(alpha, beta, gamma, sign)
            }
            CoefficientSpec::BoundedSmooth { level, amplitude, drift } => {
                Self::bounded_smooth(level, amplitude, drift)
            }
        }
    }

    pub fn kind(&self) -> &CoefficientKind {
        &self.kind
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Builtin { diffusion, .. } => match *diffusion {
                Diffusion::Affine { slope, center } => slope * (x - center),
                Diffusion::Constant(c) => c,
                Diffusion::Root { alpha, beta, gamma, sign } => {
                    sign * (alpha * x * x + beta * x + gamma).sqrt()
                }
                Diffusion::Tanh { level, amplitude } => level + amplitude * x.tanh(),
            },
            Repr::Custom(c) => (c.sigma)(x),
        }
    }

    #[inline]
    pub fn dsigma(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Builtin { diffusion, .. } => match *diffusion {
                Diffusion::Affine { slope, .. } => slope,
                Diffusion::Constant(_) => 0.0,
                Diffusion::Root { alpha, beta, .. } => {
                    // 2σσ' = q'
                    (2.0 * alpha * x + beta) / (2.0 * self.sigma(x))
                }
                Diffusion::Tanh { amplitude, .. } => {
                    let c = x.cosh();
                    amplitude / (c * c)
                }
            },
            Repr::Custom(c) => (c.dsigma)(x),
        }
    }

    #[inline]
    pub fn d2sigma(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Builtin { diffusion, .. } => match *diffusion {
                Diffusion::Affine { .. } | Diffusion::Constant(_) => 0.0,
                Diffusion::Root { alpha, .. } => {
                    // σ'^2 + σσ'' = α
                    let s = self.sigma(x);
                    let ds = self.dsigma(x);
                    (alpha - ds * ds) / s
                }
                Diffusion::Tanh { amplitude, .. } => {
                    let c = x.cosh();
                    -2.0 * amplitude * x.tanh() / (c * c)
                }
            },
            Repr::Custom(c) => (c.d2sigma)(x),
        }
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Builtin { drift, .. } => match *drift {
                Drift::Zero => 0.0,
                Drift::Linear(beta) => beta * x,
                Drift::Sine(d) => d * x.sin(),
            },
            Repr::Custom(c) => c.drift.as_ref().map_or(0.0, |(b, _)| b(x)),
        }
    }

    #[inline]
    pub fn ddrift(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Builtin { drift, .. } => match *drift {
                Drift::Zero => 0.0,
                Drift::Linear(beta) => beta,
                Drift::Sine(d) => d * x.cos(),
            },
            Repr::Custom(c) => c.drift.as_ref().map_or(0.0, |(_, db)| db(x)),
        }
    }

    /// `b ≡ 0`.
    pub fn has_zero_drift(&self) -> bool {
        match &self.repr {
            Repr::Builtin { drift, .. } => *drift == Drift::Zero,
            Repr::Custom(c) => c.drift.is_none(),
        }
    }

    /// `σ' ≡ 0`.
    pub fn sigma_is_constant(&self) -> bool {
        matches!(
            self.repr,
            Repr::Builtin { diffusion: Diffusion::Constant(_), .. }
        )
    }

    /// `sup |σ'|` when finite and known.
    pub fn dsigma_bound(&self) -> Option<f64> {
        match &self.repr {
            Repr::Builtin { diffusion, .. } => match *diffusion {
                Diffusion::Affine { slope, .. } => Some(slope.abs()),
                Diffusion::Constant(_) => Some(0.0),
                Diffusion::Root { alpha, beta, gamma, .. } => {
                    // |σ'| ≤ sqrt(α) when the quadratic has no real root
                    (alpha > 0.0 && beta * beta < 4.0 * alpha * gamma).then(|| alpha.sqrt())
                }
                Diffusion::Tanh { amplitude, .. } => Some(amplitude),
            },
            Repr::Custom(c) => c.dsigma_bound,
        }
    }

    /// Whether `σ` and `b` are both bounded functions.
    pub fn is_bounded(&self) -> bool {
        match &self.repr {
            Repr::Builtin { diffusion, drift } => {
                matches!(diffusion, Diffusion::Constant(_) | Diffusion::Tanh { .. })
                    && matches!(drift, Drift::Zero | Drift::Sine(_))
            }
            Repr::Custom(_) => false,
        }
    }

    /// `(α, β, γ)` with `σ(x)^2 = αx^2 + βx + γ`, when `σ^2` is a quadratic polynomial.
    pub fn sigma_squared_quadratic(&self) -> Option<(f64, f64, f64)> {
        match &self.repr {
            Repr::Builtin { diffusion, .. } => match *diffusion {
                Diffusion::Affine { slope, center } => {
                    let a = slope * slope;
                    Some((a, -2.0 * a * center, a * center * center))
                }
                Diffusion::Constant(c) => Some((0.0, 0.0, c * c)),
                Diffusion::Root { alpha, beta, gamma, .. } => Some((alpha, beta, gamma)),
                Diffusion::Tanh { .. } => None,
            },
            Repr::Custom(_) => None,
        }
    }

    /// `σ(x)` or an error where `σ^2 < 0`.
    pub fn sigma_checked(&self, x: f64) -> Result<f64> {
        let s = self.sigma(x);
        if s.is_nan() {
            Err(Error::SigmaDomain(x))
        } else {
            Ok(s)
        }
    }

    pub(crate) fn affine_sigma(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Builtin { diffusion: Diffusion::Affine { slope, center }, .. } => {
                Some((*slope, *center))
            }
            _ => None,
        }
    }

    pub(crate) fn constant_sigma(&self) -> Option<f64> {
        match &self.repr {
            Repr::Builtin { diffusion: Diffusion::Constant(c), .. } => Some(*c),
            _ => None,
        }
    }

    /// `(α, β, γ, sign)` for the non-degenerate square-root branch.
    pub(crate) fn root_sigma(&self) -> Option<(f64, f64, f64, f64)> {
        match &self.repr {
            Repr::Builtin {
                diffusion: Diffusion::Root { alpha, beta, gamma, sign },
                ..
            } => Some((*alpha, *beta, *gamma, *sign)),
            _ => None,
        }
    }

    /// Spot-checks `σ'`, `σ''` and `b'` against central differences at `points`
    /// random locations in `[lo, hi]`.
    pub fn check_derivatives<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        points: usize,
        lo: f64,
        hi: f64,
        rel_tol: f64,
    ) -> Result<()> {
        let h = 1e-5;
        let check = |name: &str, x: f64, analytic: f64, numeric: f64| -> Result<()> {
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            if (analytic - numeric).abs() > rel_tol * scale {
                Err(Error::Config(format!(
                    "{name} inconsistent at x = {x}: analytic {analytic}, finite difference {numeric}"
                )))
            } else {
                Ok(())
            }
        };
        for _ in 0..points {
            let x = rng.random_range(lo..hi);
            check("sigma'", x, self.dsigma(x), (self.sigma(x + h) - self.sigma(x - h)) / (2.0 * h))?;
            check("sigma''", x, self.d2sigma(x), (self.dsigma(x + h) - self.dsigma(x - h)) / (2.0 * h))?;
            check("b'", x, self.ddrift(x), (self.drift(x + h) - self.drift(x - h)) / (2.0 * h))?;
        }
        Ok(())
    }
}
