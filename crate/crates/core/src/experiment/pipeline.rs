//! Shared building blocks of the experiments: calibrated kernel constants,
//! the radial grid, deterministic steady states, generators and initial
//! ensembles.

use crate::diagnostics::{DensityEstimate, EntropyReport, EntropySettings, EntropyTracker, GridSpec};
use crate::dsmc::{init_ensemble, run, DsmcConfig, Ensemble, InitialDistribution, RunOptions};
use crate::error::Result;
use crate::kinetics::{calibrate_c0, BathMaxwellian, KernelConstants, RestitutionParams, Velocity, WeightSpec};
use crate::rng::subseed;
use crate::spectral::{assemble_pieces, build_grid, OperatorMatrix, Pieces, Placement, RadialGrid, RadialProfile};
use crate::steady::{steady_deterministic, steady_edges, MarchSettings, SteadyOptions, SteadyStateResult};

use super::config::{ExperimentConfig, InitSpec};

/// Probe velocities (in units of `sqrt(theta0)`) for the C0 calibration.
const PROBES: [[f64; 3]; 3] = [[0.3, 0.0, 0.0], [0.0, 1.5, 0.0], [2.0, 1.0, 0.5]];

/// Index of the burn-in stream among the derived seeds.
pub const BURN_SEED: u64 = 1;
/// Index of the Monte Carlo diagnostics stream.
pub const DIAGNOSTIC_SEED: u64 = 2;

pub struct Workbench {
    pub bath: BathMaxwellian,
    pub constants: KernelConstants,
    pub grid: RadialGrid,
    pub weights: WeightSpec,
    pub spectral_weights: WeightSpec,
    pub edges: Vec<f64>,
    pub march: MarchSettings,
}

impl Workbench {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let bath = cfg.bath()?;
        let s = bath.theta0.sqrt();
        let probes: Vec<Velocity> = PROBES.iter().map(|p| bath.u0 + Velocity::from_array(*p) * s).collect();
        let constants = calibrate_c0(&bath, &probes)?.constants;
        let grid = build_grid(cfg.grid_n, cfg.r_max, Placement::GaussJacobi, bath)?;
        Ok(Self {
            bath,
            constants,
            grid,
            weights: cfg.weights()?,
            spectral_weights: cfg.spectral_weights()?,
            edges: steady_edges(&bath, cfg.bins),
            march: MarchSettings::new(cfg.march_dt, cfg.tol),
        })
    }

    pub fn steady_options(&self) -> SteadyOptions {
        let mut o = SteadyOptions::new(&self.bath);
        o.weights = self.weights;
        o.edges = self.edges.clone();
        o
    }

    /// Steady state on the grid by deterministic marching.
    pub fn steady(&self, alpha: f64) -> Result<SteadyStateResult> {
        let params = RestitutionParams::new(alpha)?;
        steady_deterministic(&self.grid, params, &self.constants, &self.march, &self.steady_options())
    }

    /// Nodal steady profile for the linearization; the bath itself at `alpha = 1`.
    pub fn profile(&self, steady: Option<&SteadyStateResult>) -> Result<RadialProfile> {
        match steady {
            Some(s) => {
                let nodal: Vec<f64> = s.profile.iter().map(|p| p.f).collect();
                RadialProfile::from_nodal(&self.grid, &nodal)
            }
            None => Ok(RadialProfile::maxwellian(&self.grid)),
        }
    }

    pub fn pieces(&self, alpha: f64, steady: Option<&SteadyStateResult>) -> Result<Pieces> {
        let profile = self.profile(steady)?;
        assemble_pieces(&self.grid, &self.constants, &profile, RestitutionParams::new(alpha)?)
    }

    /// Linearized generator at `alpha`, computing the steady state when needed.
    pub fn generator(&self, alpha: f64) -> Result<(Pieces, OperatorMatrix)> {
        let steady = if alpha < 1.0 { Some(self.steady(alpha)?) } else { None };
        let pieces = self.pieces(alpha, steady.as_ref())?;
        let op = pieces.l_alpha(&self.grid, self.spectral_weights);
        Ok((pieces, op))
    }

    /// Radial binning shared by every particle distance.
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::Radial { center: self.bath.u0, edges: self.edges.clone() }
    }

    /// Reference density for distances: the binned steady state, or the bath.
    pub fn reference(&self, steady: Option<&SteadyStateResult>) -> Result<DensityEstimate> {
        match steady {
            Some(s) => Ok(s.f_alpha.clone()),
            None => DensityEstimate::binned_maxwellian(&self.bath, self.edges.clone()),
        }
    }
}

/// Initial ensemble of a particle run. Steady and perturbed data come from a
/// burn-in of `t_burn` started at the bath, on a derived seed; the returned
/// ensemble always runs on `cfg.seed` from step 0.
pub fn initial_ensemble(cfg: &ExperimentConfig, alpha: f64) -> Result<Ensemble> {
    let bath = cfg.bath()?;
    let scale = match &cfg.init {
        InitSpec::Explicit { distribution } => return init_ensemble(distribution, cfg.particles, cfg.seed),
        InitSpec::Steady => 1.0,
        InitSpec::Perturbed { perturbation } => (1.0 + perturbation).sqrt(),
    };
    let start = InitialDistribution::Maxwellian { u: bath.u0, theta: bath.theta0 };
    let mut burn = init_ensemble(&start, cfg.particles, subseed(cfg.seed, BURN_SEED))?;
    let dsmc = DsmcConfig::new(RestitutionParams::new(alpha)?, bath);
    run(&mut burn, &dsmc, &RunOptions::new(cfg.t_burn, cfg.dt), &mut [])?;
    let v = burn.velocities().iter().map(|&v| bath.u0 + (v - bath.u0) * scale).collect();
    Ensemble::from_velocities(v, cfg.seed)
}

/// Entropy diagnostics along a particle run at `cfg.alpha`, binned on the
/// steady-state shells.
pub fn entropy_run(cfg: &ExperimentConfig, bench: &Workbench) -> Result<EntropyReport> {
    let alpha = cfg.alpha;
    let steady = if alpha < 1.0 { Some(bench.steady(alpha)?) } else { None };
    let settings = EntropySettings {
        n_mc: cfg.n_mc,
        bins: Some(cfg.bins),
        r_max: None,
        weights: bench.weights,
        seed: subseed(cfg.seed, DIAGNOSTIC_SEED),
    };
    let mut tracker = EntropyTracker::new(alpha, bench.bath, settings).with_reference(bench.reference(steady.as_ref())?);
    let mut ens = initial_ensemble(cfg, alpha)?;
    let dsmc = DsmcConfig::new(RestitutionParams::new(alpha)?, bench.bath);
    let mut opts = RunOptions::new(cfg.t_final, cfg.dt);
    opts.sample_every = cfg.sample_every;
    let mut hook = |e: &Ensemble| tracker.record(e.time(), e.velocities()).map(|_| ());
    run(&mut ens, &dsmc, &opts, &mut [&mut hook])?;
    Ok(tracker.finish())
}
