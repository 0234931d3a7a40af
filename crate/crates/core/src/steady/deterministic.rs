//! Explicit time marching of the isotropic equation on the radial grid.

use serde::{Deserialize, Serialize};

use super::CollisionTensor;
use crate::error::{invalid, Error, Result};
use crate::kinetics::WeightSpec;
use crate::spectral::{OperatorMatrix, OperatorTag, RadialGrid};

/// Renormalization above this per step means mass leaks, not rounding.
pub const RENORM_LIMIT: f64 = 1e-10;
/// Nodal values below this count as negative and reject the step.
pub const NEGATIVE_LIMIT: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarchSettings {
    pub dt: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub min_dt: f64,
}

impl MarchSettings {
    pub fn new(dt: f64, tol: f64) -> Self {
        Self { dt, tol, max_steps: 200_000, min_dt: 1e-8 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.tol > 0.0 && self.min_dt > 0.0) {
            return Err(invalid("marching needs dt > 0, tol > 0 and min_dt > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarchLog {
    pub steps: usize,
    pub final_dt: f64,
    pub halvings: usize,
    /// Largest `|mass - 1|` removed by renormalization in a single step.
    pub max_renorm: f64,
    /// `(step, residual)` every 50 steps and at the end.
    pub residuals: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchResult {
    pub nodal: Vec<f64>,
    pub residual: f64,
    pub log: MarchLog,
}

/// `Q(f, f) + L f` at the nodes.
pub fn rhs(tensor: &CollisionTensor, l: &OperatorMatrix, f: &[f64]) -> Vec<f64> {
    let q = tensor.apply(f);
    let lf = l.apply(f);
    q.iter().zip(&lf).map(|(a, b)| a + b).collect()
}

/// Marches `f <- f + dt (Q(f,f) + L f)` from `f0` until the X residual drops
/// below `tol`.
pub fn march(
    grid: &RadialGrid,
    tensor: &CollisionTensor,
    l: &OperatorMatrix,
    f0: &[f64],
    settings: &MarchSettings,
    weights: &WeightSpec,
) -> Result<MarchResult> {
    settings.validate()?;
    if l.tag != OperatorTag::L || l.grid != *grid || tensor.n() != grid.len() || f0.len() != grid.len() {
        return Err(invalid("tensor, scattering operator and initial data must share the grid"));
    }
    let mass0 = grid.mass(f0);
    if !(mass0 > 0.0) || f0.iter().any(|&x| x < NEGATIVE_LIMIT || !x.is_finite()) {
        return Err(invalid("initial density must be nonnegative with positive mass"));
    }
    let mut f: Vec<f64> = f0.iter().map(|x| x / mass0).collect();
    let mut dt = settings.dt;
    let mut log = MarchLog { steps: 0, final_dt: dt, halvings: 0, max_renorm: 0.0, residuals: Vec::new() };
    let mut r = rhs(tensor, l, &f);
    let mut res = grid.x_norm(&r, weights);
    while res >= settings.tol {
        if log.steps >= settings.max_steps {
            return Err(Error::Numerical(format!(
                "steady marching did not reach {:.1e} in {} steps (residual {res:.3e})",
                settings.tol, settings.max_steps
            )));
        }
        let next: Vec<f64> = f.iter().zip(&r).map(|(a, b)| a + dt * b).collect();
        if next.iter().any(|&x| x < NEGATIVE_LIMIT || !x.is_finite()) {
            dt *= 0.5;
            log.halvings += 1;
            if dt < settings.min_dt {
                return Err(Error::Numerical(format!("time step underflow below {:.1e}", settings.min_dt)));
            }
            continue;
        }
        let mass = grid.mass(&next);
        let renorm = (mass - 1.0).abs();
        log.max_renorm = log.max_renorm.max(renorm);
        if renorm > RENORM_LIMIT {
            return Err(Error::Numerical(format!("mass drift {renorm:.3e} in one step exceeds {RENORM_LIMIT:.0e}")));
        }
        f = next.iter().map(|x| x / mass).collect();
        log.steps += 1;
        r = rhs(tensor, l, &f);
        res = grid.x_norm(&r, weights);
        if log.steps % 50 == 0 {
            log.residuals.push((log.steps, res));
        }
    }
    log.residuals.push((log.steps, res));
    log.final_dt = dt;
    Ok(MarchResult { nodal: f, residual: res, log })
}
