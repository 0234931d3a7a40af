use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{BathMaxwellian, WeightSpec};
use crate::quadrature::{gauss_jacobi_r2, gauss_legendre};

/// How radial nodes are placed on `[0, R_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Gauss–Jacobi nodes for the weight `r^2`.
    #[default]
    GaussJacobi,
    /// Gauss–Legendre nodes in `r`, with `r^2` folded into the weights.
    GaussLegendre,
}

/// Speeds about the bath velocity with weights for `int phi(r) 4 pi r^2 dr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub r_max: f64,
    pub placement: Placement,
    pub bath: BathMaxwellian,
}

pub const MASS_TOL: f64 = 1e-8;

/// Builds the grid and rejects it if the bath mass or energy is off by more
/// than `MASS_TOL`.
pub fn build_grid(n: usize, r_max: f64, placement: Placement, bath: BathMaxwellian) -> Result<RadialGrid> {
    if n < 16 {
        return Err(invalid(format!("radial grid needs at least 16 nodes, got {n}")));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(invalid(format!("truncation radius {r_max} must be positive")));
    }
    let (nodes, weights) = match placement {
        Placement::GaussJacobi => {
            let rule = gauss_jacobi_r2(n);
            let h = 0.5 * r_max;
            let nodes = rule.nodes.iter().map(|x| h * (1.0 + x)).collect();
            let weights = rule.weights.iter().map(|w| 4.0 * PI * h * h * h * w).collect();
            (nodes, weights)
        }
        Placement::GaussLegendre => {
            let rule = gauss_legendre(n).mapped(0.0, r_max);
            let weights = rule.nodes.iter().zip(&rule.weights).map(|(r, w)| 4.0 * PI * r * r * w).collect();
            (rule.nodes, weights)
        }
    };
    let grid = RadialGrid { nodes, weights, r_max, placement, bath };
    let (mass, energy) = grid.maxwellian_residuals();
    if mass > MASS_TOL || energy > MASS_TOL {
        return Err(Error::Quadrature { residual: mass.max(energy) });
    }
    Ok(grid)
}

impl RadialGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bath Maxwellian at the nodes.
    pub fn maxwellian(&self) -> Vec<f64> {
        self.nodes.iter().map(|&r| self.bath.radial_density(r)).collect()
    }

    /// `|sum W M - 1|` and `|sum W M r^2 - 3 theta0|`.
    pub fn maxwellian_residuals(&self) -> (f64, f64) {
        let m = self.maxwellian();
        let mass: f64 = self.weights.iter().zip(&m).map(|(w, m)| w * m).sum();
        let energy: f64 = self.weights.iter().zip(&m).zip(&self.nodes).map(|((w, m), r)| w * m * r * r).sum();
        ((mass - 1.0).abs(), (energy - 3.0 * self.bath.theta0).abs())
    }

    /// `sum_i W_i h_i`.
    pub fn mass(&self, h: &[f64]) -> f64 {
        self.weights.iter().zip(h).map(|(w, h)| w * h).sum()
    }

    /// Discrete X weights `m^{-1}(r_i) W_i`.
    pub fn x_weights(&self, ws: &WeightSpec) -> Vec<f64> {
        self.nodes.iter().zip(&self.weights).map(|(&r, w)| ws.inv_weight(r) * w).collect()
    }

    /// Discrete Y weights `<r_i> m^{-1}(r_i) W_i`.
    pub fn y_weights(&self, ws: &WeightSpec) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, w)| WeightSpec::bracket(r) * ws.inv_weight(r) * w)
            .collect()
    }

    pub fn x_norm(&self, h: &[f64], ws: &WeightSpec) -> f64 {
        self.x_weights(ws).iter().zip(h).map(|(w, h)| w * h.abs()).sum()
    }

    pub fn y_norm(&self, h: &[f64], ws: &WeightSpec) -> f64 {
        self.y_weights(ws).iter().zip(h).map(|(w, h)| w * h.abs()).sum()
    }

    /// Index of the first node beyond `r`.
    pub fn first_beyond(&self, r: f64) -> usize {
        self.nodes.partition_point(|&x| x <= r)
    }
}
