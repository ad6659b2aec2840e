//! Online maximum-likelihood estimation for weakly interacting particle
//! systems from a single observed trajectory.
//!
//! The estimator propagates auxiliary "virtual" particle ensembles and
//! their tangent (sensitivity) system at the live parameter estimate and
//! updates the estimate from each observed increment: either the ensemble
//! averaged update or the cheaper particlewise update, which the averaged
//! one Rao-Blackwellises.
//!
//! Layout:
//! - [`models`]: drift kernels (quadratic, FitzHugh-Nagumo, Kuramoto) with
//!   analytic Jacobians, diffusion, weights, and state-space geometry
//! - [`dynamics`]: Euler-Maruyama stepping, tangent integration, observed
//!   data generation, reproducible RNG streams
//! - [`estimators`]: the two update rules and the joint state transition
//! - [`oracle`]: closed-form reference values and numerical cross-checks
//! - [`harness`]: configs, experiment runs, sweeps, CSV output, presets

pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod models;
pub mod oracle;

pub use error::{Error, Result};
