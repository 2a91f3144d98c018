//! Numerical laboratory for the weighted Yamabe flow on smooth metric
//! measure spaces.
//!
//! The modules build on each other: [`geometry`] discretizes base manifolds,
//! [`smms`] adds the conformal factor and weighted curvature, [`energy`]
//! evaluates the normalized energy and its variations, [`flow`] integrates the
//! conformal-factor evolution, [`spectral`] diagonalizes the linearized
//! operator, [`reduction`] performs the Lyapunov–Schmidt reduction,
//! [`slowflow`] constructs slowly converging solutions on reduced models and
//! [`rates`] fits convergence rates.

pub mod error;
pub mod geometry;
pub mod smms;
pub mod energy;
pub mod flow;
pub mod spectral;
pub mod reduction;
pub mod slowflow;
pub mod rates;

pub use error::{Result, WyfError};
