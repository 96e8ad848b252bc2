//! Scalar stochastic differential equations driven by fractional Brownian motion.
//!
//! The crate is organised bottom-up:
//!
//! * [`fbm`] samples fractional Brownian motion exactly (Davies–Harte and Cholesky).
//! * [`coefficients`] and [`flow`] describe the equation and build reference
//!   solutions through the Doss–Sussmann representation `X_t = φ(A_t, B_t)`.
//! * [`schemes`] implements the Euler, modified Euler and Crank–Nicholson schemes.
//! * [`malliavin`] evaluates the Malliavin derivative of the solution and the
//!   almost-sure limit functionals of the Euler error.
//! * [`variations`] contains power variations of fBm and the `σ_H` constants.
//! * [`experiments`] runs coupled Monte Carlo checks of convergence rates and limit laws.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod fbm;
pub mod flow;
pub mod malliavin;
mod ode;
pub mod output;
pub mod rng;
pub mod schemes;
pub mod stats;
pub mod variations;

pub use coefficients::{CoefficientKind, Coefficients};
pub use error::{Error, Result};
pub use fbm::{FbmPath, FbmSampler, Grid, HurstParameter};
pub use flow::{FlowMap, ReferenceSolution};
pub use schemes::{SchemeKind, SchemeResult};
