//! Phase-space dynamics of a free particle under momentum noise, with and
//! without linear damping.
//!
//! The crate connects four views of the same physics:
//!
//! * [`params`]: collapse-model and heat-bath parameters mapped onto one
//!   noise intensity `epsilon`;
//! * [`sde`]: Monte Carlo ensembles of the Itô equations for `(x, p)`;
//! * [`oracle`]: closed-form second moments, limits, the critical damping
//!   rate and the stationary energy budget;
//! * [`fpe`]: finite-volume Fokker-Planck evolution of the phase-space
//!   density and the Wigner transform of sampled density matrices.
//!
//! [`analysis`] turns moment series into growth exponents and regime labels
//! (t³ turbulent, t² ballistic, t Brownian) and [`acceptance`] runs the
//! end-to-end verification suite.

// `!(a > b)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod analysis;
pub mod error;
pub mod fpe;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod sde;
pub mod table;

pub use error::{Error, Result};
pub use params::{GrwParams, InitialState, PhysicalParams, ThermalParams};
pub use sde::{EnsembleConfig, EnsembleMoments, Estimate, Execution, Integrator, ParticleState};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
