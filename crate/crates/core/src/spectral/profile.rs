//! Isotropic densities on a radial grid written as `F(r) = M(r) g(r^2)`
//! with `g` piecewise linear in `u = r^2` and constant beyond the end nodes.
//! The representation is linear in the nodal values and exact for multiples
//! of the bath Maxwellian.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::RadialGrid;
use crate::diagnostics::DensityEstimate;
use crate::error::{invalid, Result};
use crate::kinetics::Velocity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    u: Vec<f64>,
    g: Vec<f64>,
    theta: f64,
    /// `int_{u_k}^inf M g du / 2`, i.e. the tail `J(r_k)`.
    tail_at: Vec<f64>,
}

/// Normalization of the Maxwellian written in `u`.
fn m_coef(theta: f64) -> f64 {
    (2.0 * PI * theta).powf(-1.5)
}

/// `int_p^q e^{-lam u} (a + b u) du`, `q` possibly infinite.
fn seg_integral(lam: f64, a: f64, b: f64, p: f64, q: f64) -> f64 {
    let prim = |u: f64| -> f64 {
        if u.is_infinite() {
            return 0.0;
        }
        let e = (-lam * u).exp();
        -e * (a + b * u) / lam - b * e / (lam * lam)
    };
    prim(q) - prim(p)
}

impl RadialProfile {
    /// From values `F(r_i)` at the grid nodes.
    pub fn from_nodal(grid: &RadialGrid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid("nodal values do not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite nodal value"));
        }
        let m = grid.maxwellian();
        let g = values.iter().zip(&m).map(|(f, m)| f / m).collect();
        Ok(Self::from_ratio(grid, g))
    }

    /// From the ratio `g = F / M` at the nodes.
    pub fn from_ratio(grid: &RadialGrid, g: Vec<f64>) -> Self {
        let u: Vec<f64> = grid.nodes.iter().map(|r| r * r).collect();
        let theta = grid.bath.theta0;
        let lam = 0.5 / theta;
        let c = 0.5 * m_coef(theta);
        let n = u.len();
        let mut tail_at = vec![0.0; n];
        tail_at[n - 1] = c * seg_integral(lam, g[n - 1], 0.0, u[n - 1], f64::INFINITY);
        for k in (0..n - 1).rev() {
            let (a, b) = Self::line(&u, &g, k);
            tail_at[k] = tail_at[k + 1] + c * seg_integral(lam, a, b, u[k], u[k + 1]);
        }
        Self { u, g, theta, tail_at }
    }

    /// The bath Maxwellian itself.
    pub fn maxwellian(grid: &RadialGrid) -> Self {
        Self::from_ratio(grid, vec![1.0; grid.len()])
    }

    /// Samples a histogram at the grid nodes. The estimate must be radial.
    pub fn from_estimate(grid: &RadialGrid, f: &DensityEstimate) -> Result<Self> {
        if let Some(score) = f.anisotropy() {
            if score > 0.05 {
                return Err(invalid(format!("density is not isotropic (score {score:.3})")));
            }
        }
        let c = f.center();
        let values: Vec<f64> = grid.nodes.iter().map(|&r| f.density_at(c + Velocity::new(r, 0.0, 0.0))).collect();
        Self::from_nodal(grid, &values)
    }

    /// Coefficients `(a, b)` of `g = a + b u` on segment `[u_k, u_{k+1}]`.
    fn line(u: &[f64], g: &[f64], k: usize) -> (f64, f64) {
        let b = (g[k + 1] - g[k]) / (u[k + 1] - u[k]);
        (g[k] - b * u[k], b)
    }

    pub fn ratio(&self) -> &[f64] {
        &self.g
    }

    fn g_at(&self, uu: f64) -> f64 {
        let n = self.u.len();
        if uu <= self.u[0] {
            return self.g[0];
        }
        if uu >= self.u[n - 1] {
            return self.g[n - 1];
        }
        let k = self.u.partition_point(|&x| x <= uu) - 1;
        let (a, b) = Self::line(&self.u, &self.g, k);
        a + b * uu
    }

    /// `F(r)`.
    pub fn value(&self, r: f64) -> f64 {
        let uu = r * r;
        m_coef(self.theta) * (-uu / (2.0 * self.theta)).exp() * self.g_at(uu)
    }

    /// `J(d) = int_d^inf t F(t) dt`; the plane integral at distance `d`
    /// from the centre is `2 pi J(d)`.
    pub fn tail(&self, d: f64) -> f64 {
        let uu = d * d;
        if !uu.is_finite() {
            return 0.0;
        }
        let lam = 0.5 / self.theta;
        let c = 0.5 * m_coef(self.theta);
        let n = self.u.len();
        if uu >= self.u[n - 1] {
            return c * seg_integral(lam, self.g[n - 1], 0.0, uu, f64::INFINITY);
        }
        if uu <= self.u[0] {
            return self.tail_at[0] + c * seg_integral(lam, self.g[0], 0.0, uu, self.u[0]);
        }
        let k = self.u.partition_point(|&x| x <= uu) - 1;
        let (a, b) = Self::line(&self.u, &self.g, k);
        self.tail_at[k + 1] + c * seg_integral(lam, a, b, uu, self.u[k + 1])
    }

    /// Values at the grid nodes.
    pub fn nodal(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.nodes.iter().map(|&r| self.value(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::BathMaxwellian;
    use crate::quadrature::gauss_legendre;
    use crate::spectral::{build_grid, Placement};

    fn grid(n: usize) -> RadialGrid {
        build_grid(n, 8.0, Placement::GaussJacobi, BathMaxwellian::standard()).unwrap()
    }

    #[test]
    fn maxwellian_tail_is_exact() {
        let g = grid(32);
        let p = RadialProfile::maxwellian(&g);
        let m = BathMaxwellian::standard();
        for d in [0.0f64, 0.3, 1.7, 4.0, 9.5] {
            // int_d^inf t M dt = (2 pi)^{-3/2} e^{-d^2/2}
            let exact = (2.0 * PI).powf(-1.5) * (-d * d / 2.0).exp();
            assert!((p.tail(d) - exact).abs() < 1e-15 + 1e-13 * exact, "{d}");
            assert!((p.value(d) - m.radial_density(d)).abs() < 1e-15);
        }
    }

    #[test]
    fn tail_matches_quadrature_for_other_temperature() {
        let g = grid(128);
        let hot = BathMaxwellian::new(Velocity::ZERO, 1.3).unwrap();
        let vals: Vec<f64> = g.nodes.iter().map(|&r| hot.radial_density(r)).collect();
        let p = RadialProfile::from_nodal(&g, &vals).unwrap();
        let gl = gauss_legendre(60);
        for d in [0.0, 0.5, 2.0, 3.5] {
            let oracle: f64 = gl.mapped(d, 14.0).integrate(|t| t * hot.radial_density(t));
            assert!((p.tail(d) - oracle).abs() < 1e-3 * oracle, "{d} {} {oracle}", p.tail(d));
        }
        // tail is continuous across nodes
        for &r in &g.nodes[..20] {
            assert!((p.tail(r * (1.0 - 1e-12)) - p.tail(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_values() {
        let g = grid(24);
        let a: Vec<f64> = g.nodes.iter().map(|r| (-r).exp()).collect();
        let b: Vec<f64> = g.nodes.iter().map(|r| 1.0 / (1.0 + r * r)).collect();
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (pa, pb, ps) = (
            RadialProfile::from_nodal(&g, &a).unwrap(),
            RadialProfile::from_nodal(&g, &b).unwrap(),
            RadialProfile::from_nodal(&g, &s).unwrap(),
        );
        for d in [0.1, 1.0, 3.0, 7.9] {
            let lin = 2.0 * pa.tail(d) - 0.5 * pb.tail(d);
            assert!((ps.tail(d) - lin).abs() < 1e-12 * (1.0 + lin.abs()));
        }
    }
}
