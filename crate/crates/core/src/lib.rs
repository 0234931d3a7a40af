//! Thermally driven inelastic hard spheres: exact collision rules, a seeded
//! particle integrator, entropy diagnostics, steady states and matrix
//! discretizations of the linearized operators on the isotropic sector.

pub mod diagnostics;
pub mod dsmc;
pub mod error;
pub mod experiment;
pub mod kinetics;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod steady;

pub use error::{Error, Result};
pub use dsmc::{DsmcConfig, Ensemble, InitialDistribution};
pub use kinetics::{BathMaxwellian, RestitutionParams, Velocity, WeightSpec};
