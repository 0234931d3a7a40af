//! Density estimation from particle samples, entropy functionals, the entropy
//! balance and decay-constant fits.

mod density;
mod entropy;
mod fit;
mod report;

pub use density::{anisotropy_score, DensityEstimate, Grid, GridSpec};
pub use entropy::{
    entropy_contributions, entropy_identity_check, entropy_production_d, entropy_production_dh,
    interpolation_check, pair_speed_moment, qlogm_term, relative_entropy, IdentityCheck,
    InterpolationCheck, McEstimate, RelativeEntropy,
};
pub use fit::{decay_fit, lambda_fit, DecayFit, LambdaFit};
pub use report::{
    entropy_balance, BalanceInterval, BalanceReport, EntropyRecord, EntropyReport, EntropySettings,
    EntropyTracker,
};
