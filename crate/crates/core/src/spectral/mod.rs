//! Discretized linear operators on isotropic perturbations of the bath and
//! of the inelastic steady state.

mod analysis;
mod assemble;
mod export;
mod grid;
mod profile;

pub use analysis::*;
pub use assemble::{
    assemble_l, assemble_l_alpha, assemble_pieces, assemble_splitting, assemble_t_alpha, gain1_rho_k,
    gain2_rho_k, reduced_kernel, scattering_rho_k, scattering_zero_mode_residual, AngularRule,
    OperatorMatrix, OperatorTag, Pieces, ANGULAR_NODES, COLUMN_MASS_TOL, ZERO_MODE_TOL,
};
pub use export::*;
pub use grid::{build_grid, Placement, RadialGrid, MASS_TOL};
pub use profile::RadialProfile;

#[cfg(test)]
mod tests;
