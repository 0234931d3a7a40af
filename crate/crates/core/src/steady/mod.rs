//! Steady states `Q_alpha(F, F) + L F = 0` by two independent routes: the
//! time-averaged particle system and deterministic marching on a radial grid.

mod deterministic;
mod dsmc;
mod limit;
mod sandwich;
mod tensor;

pub use deterministic::{march, rhs, MarchLog, MarchResult, MarchSettings, NEGATIVE_LIMIT, RENORM_LIMIT};
pub use dsmc::{drifting, integrated_autocorrelation, DsmcSteadyLog, DsmcSteadySettings};
pub use limit::{elastic_limit_curve, LimitRow, LimitTable, RouteSpec};
pub use sandwich::{sandwich_check, Envelope, ProfilePoint, SandwichFit, TAIL_GROWTH_LIMIT};
pub use tensor::{grid_hash, CollisionTensor, TensorMeta};

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::diagnostics::DensityEstimate;
use crate::dsmc::DsmcConfig;
use crate::error::{invalid, Error, Result};
use crate::kinetics::{BathMaxwellian, KernelConstants, RestitutionParams, WeightSpec};
use crate::spectral::{assemble_l, RadialGrid, RadialProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Dsmc,
    Deterministic,
}

/// Relative floor below which deterministic nodal values are not trusted.
const NODAL_FLOOR: f64 = 1e-12;

/// Uniform shells on `[0, 7 sqrt(Theta0)]` used by both routes.
pub fn steady_edges(bath: &BathMaxwellian, bins: usize) -> Vec<f64> {
    let r_max = 7.0 * bath.theta0.sqrt();
    (0..=bins).map(|k| r_max * k as f64 / bins as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyOptions {
    /// Weight of the X and Y norms for residuals and distances.
    pub weights: WeightSpec,
    /// Radial shells shared by both routes.
    pub edges: Vec<f64>,
    /// Initial nodal values for marching; the bath Maxwellian when absent.
    pub f0: Option<Vec<f64>>,
    pub tensor_cache: Option<PathBuf>,
}

impl SteadyOptions {
    pub fn new(bath: &BathMaxwellian) -> Self {
        Self { weights: WeightSpec::default(), edges: steady_edges(bath, 32), f0: None, tensor_cache: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateResult {
    pub route: Route,
    pub alpha: f64,
    pub f_alpha: DensityEstimate,
    /// Pointwise density with noise floors: grid nodes or bin representatives.
    pub profile: Vec<ProfilePoint>,
    pub mass: f64,
    /// Mean `|v - u0|^2`.
    pub energy: f64,
    pub energy_se: f64,
    /// `|Q(F,F) + L F|` in the discrete X norm.
    pub residual: f64,
    pub residual_tol: f64,
    /// `(X, Y)` distance of the binned `F` to the binned bath Maxwellian.
    pub distance_to_bath: (f64, f64),
    pub sandwich: Option<SandwichFit>,
    pub march: Option<MarchLog>,
    pub tensor: Option<TensorMeta>,
    pub dsmc: Option<DsmcSteadyLog>,
    pub weights: WeightSpec,
    pub flags: Vec<String>,
}

impl SteadyStateResult {
    pub fn theta_eff(&self) -> f64 {
        self.energy / 3.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `r, F, lower, upper` per profile point; envelopes empty when absent.
    pub fn to_csv(&self) -> String {
        let env = |e: Option<&Envelope>, r: f64| e.map(|e| format!("{:.12e}", e.value(r))).unwrap_or_default();
        let mut out = String::from("r,F,lower,upper\n");
        let s = self.sandwich.as_ref();
        for p in &self.profile {
            let _ = writeln!(
                out,
                "{:.12e},{:.12e},{},{}",
                p.r,
                p.f,
                env(s.and_then(|s| s.lower.as_ref()), p.r),
                env(s.and_then(|s| s.upper.as_ref()), p.r)
            );
        }
        out
    }

    fn finish(mut self, bath: &BathMaxwellian) -> Result<Self> {
        let m = DensityEstimate::binned_maxwellian(bath, self.f_alpha.edges().to_vec())?;
        self.distance_to_bath = self.f_alpha.distance(&m, &self.weights)?;
        match sandwich_check(&self.profile, Some(self.theta_eff())) {
            Ok(fit) => {
                if !fit.passed {
                    self.flags.push(format!("sandwich: {}", fit.reason.clone().unwrap_or_default()));
                }
                self.sandwich = Some(fit);
            }
            Err(e) => self.flags.push(format!("sandwich: {e}")),
        }
        if self.residual >= self.residual_tol {
            self.flags.push(format!("residual {:.3e} above tolerance {:.3e}", self.residual, self.residual_tol));
        }
        if (self.mass - 1.0).abs() > 1e-8 {
            self.flags.push(format!("mass {} differs from one", self.mass));
        }
        Ok(self)
    }
}

/// Time-averaged particle route started from the bath Maxwellian.
pub fn steady_dsmc(cfg: &DsmcConfig, settings: &DsmcSteadySettings, options: &SteadyOptions) -> Result<SteadyStateResult> {
    let out = dsmc::run_dsmc(cfg, settings, &options.edges, &options.weights)?;
    let speeds = out.estimate.bin_speeds();
    let profile = speeds
        .iter()
        .zip(out.estimate.bin_densities())
        .zip(&out.floors)
        .map(|((&r, f), &floor)| ProfilePoint { r, f, floor })
        .collect();
    let mass = out.estimate.total_mass() + out.estimate.escaped_mass();
    SteadyStateResult {
        route: Route::Dsmc,
        alpha: cfg.params.alpha(),
        f_alpha: out.estimate,
        profile,
        mass,
        energy: out.energy,
        energy_se: out.energy_se,
        residual: out.residual,
        residual_tol: out.residual_tol,
        distance_to_bath: (0.0, 0.0),
        sandwich: None,
        march: None,
        tensor: None,
        dsmc: Some(out.log),
        flags: Vec::new(),
        weights: options.weights,
    }
    .finish(&cfg.bath)
}

/// Deterministic marching on the radial grid with the precomputed tensor.
pub fn steady_deterministic(
    grid: &RadialGrid,
    params: RestitutionParams,
    constants: &KernelConstants,
    settings: &MarchSettings,
    options: &SteadyOptions,
) -> Result<SteadyStateResult> {
    let tensor = match &options.tensor_cache {
        Some(path) => CollisionTensor::cached(path, grid, params)?,
        None => CollisionTensor::build(grid, params)?,
    };
    let l = assemble_l(grid, constants, options.weights)?;
    let f0 = options.f0.clone().unwrap_or_else(|| grid.maxwellian());
    let out = march(grid, &tensor, &l, &f0, settings, &options.weights)?;
    from_nodal(grid, params, &out.nodal, out.residual, settings.tol, options)
        .map(|mut r| {
            r.march = Some(out.log);
            r.tensor = Some(tensor.meta.clone());
            r
        })
}

/// Result record for a nodal solution on `grid`.
fn from_nodal(
    grid: &RadialGrid,
    params: RestitutionParams,
    nodal: &[f64],
    residual: f64,
    tol: f64,
    options: &SteadyOptions,
) -> Result<SteadyStateResult> {
    if nodal.iter().any(|&x| x < NEGATIVE_LIMIT) {
        return Err(Error::Numerical("negative steady density".into()));
    }
    let clean: Vec<f64> = nodal.iter().map(|x| x.max(0.0)).collect();
    let prof = RadialProfile::from_nodal(grid, &clean)?;
    let u0 = grid.bath.u0;
    let f_alpha = DensityEstimate::binned_radial(u0, options.edges.clone(), |r| prof.value(r))?;
    let top = clean.iter().fold(0.0f64, |a, &b| a.max(b));
    let profile = grid
        .nodes
        .iter()
        .zip(&clean)
        .map(|(&r, &f)| ProfilePoint { r, f, floor: NODAL_FLOOR * top })
        .collect();
    let energy = grid.nodes.iter().zip(&grid.weights).zip(&clean).map(|((r, w), f)| r * r * w * f).sum();
    SteadyStateResult {
        route: Route::Deterministic,
        alpha: params.alpha(),
        f_alpha,
        profile,
        mass: grid.mass(&clean),
        energy,
        energy_se: 0.0,
        residual,
        residual_tol: tol,
        distance_to_bath: (0.0, 0.0),
        sandwich: None,
        march: None,
        tensor: None,
        dsmc: None,
        flags: Vec::new(),
        weights: options.weights,
    }
    .finish(&grid.bath)
}

/// Agreement of two steady states on the same shells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub alpha: f64,
    pub distance_x: f64,
    pub distance_y: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// X and Y distance between two results; disagreement beyond `tolerance`
/// is an error.
pub fn cross_validate(a: &SteadyStateResult, b: &SteadyStateResult, tolerance: f64) -> Result<CrossCheck> {
    if a.alpha != b.alpha {
        return Err(invalid("cross validation needs the same restitution coefficient"));
    }
    let (x, y) = a.f_alpha.distance(&b.f_alpha, &a.weights)?;
    let check = CrossCheck { alpha: a.alpha, distance_x: x, distance_y: y, tolerance, passed: x <= tolerance };
    if !check.passed {
        return Err(Error::Numerical(format!(
            "routes disagree at alpha = {}: X distance {x:.3e} > {tolerance:.3e}",
            a.alpha
        )));
    }
    Ok(check)
}
