//! Cluster statistics of coalescing Brownian particle systems.
//!
//! A system of Brownian particles started from every point of the line,
//! moving independently until they meet and together afterwards, maps any
//! interval to a finite set of points. This crate implements the exact
//! statistics of that cluster count - closed-form mean/variance/second
//! moment, the Pfaffian n-point densities of the cluster positions, and
//! quadrature factorial moments - together with an exact-in-law particle
//! Monte Carlo and an experiment harness that verifies the central limit
//! behaviour of the count, its Berry-Esseen-type rate shape, the duality
//! count identity, and the diffusive scaling invariance.
//!
//! Modules:
//! * [`analytic`] - closed forms and the mixing-coefficient bound.
//! * [`pfaffian`] - Pfaffian evaluators, kernel, densities, factorial moments.
//! * [`simulator`] - coalescing-particle Monte Carlo (two backends).
//! * [`stats`] - moment/KS/total-variation estimators.
//! * [`harness`] - experiment orchestration, reports, serialization.

pub mod analytic;
pub mod error;
mod gauss;
pub mod harness;
pub mod pfaffian;
pub mod rng;
pub mod simulator;
pub mod special;
pub mod stats;
mod unionfind;

pub use error::{Error, Result};
