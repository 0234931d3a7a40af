//! Fixtures shared by the benchmarks.

use inelastic_core::dsmc::{init_ensemble, DsmcConfig, Ensemble, InitialDistribution};
use inelastic_core::kinetics::{calibrate_c0, BathMaxwellian, KernelConstants, RestitutionParams, Velocity};
use inelastic_core::spectral::{build_grid, Placement, RadialGrid};

pub fn bath() -> BathMaxwellian {
    BathMaxwellian::standard()
}

pub fn constants() -> KernelConstants {
    let probes = [Velocity::new(0.3, 0.0, 0.0), Velocity::new(0.0, 1.5, 0.0), Velocity::new(2.0, 1.0, 0.5)];
    calibrate_c0(&bath(), &probes).expect("calibration").constants
}

pub fn grid(n: usize) -> RadialGrid {
    build_grid(n, 10.0, Placement::GaussJacobi, bath()).expect("grid")
}

/// Ensemble at the bath temperature and the matching integrator settings.
pub fn particles(n: usize, alpha: f64) -> (Ensemble, DsmcConfig) {
    let ens = init_ensemble(&InitialDistribution::maxwellian(1.0), n, 1).expect("ensemble");
    let cfg = DsmcConfig::new(RestitutionParams::new(alpha).expect("alpha"), bath());
    (ens, cfg)
}
