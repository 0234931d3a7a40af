//! Nyström assembly of the linear operators on the isotropic subspace.
//!
//! A discrete vector holds nodal values `h_i = h(r_i)` and its mass is
//! `sum_i W_i h_i`. An integral operator with radial kernel `kbar` acts as
//! `(K h)_i = sum_j kbar(r_i, r_j) W_j h_j`, where `kbar` is the kernel
//! averaged over the relative orientation of `v` and `w` at fixed speeds:
//! `kbar(r, s) = (2 r s)^{-1} int_{|r-s|}^{r+s} rho K(rho) d rho`.
//! The diagonal of every gain matrix is fixed so that its columns carry the
//! discrete collision frequency, which makes the column masses vanish exactly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{RadialGrid, RadialProfile};
use crate::error::{invalid, Result};
use crate::kinetics::{gain_kernel_k1_constant, shell_mean_speed, KernelConstants, RestitutionParams, WeightSpec};
use crate::quadrature::{gauss_legendre, Rule};

/// Gauss–Legendre nodes in `log rho` for the angular reduction.
pub const ANGULAR_NODES: usize = 48;

/// Relative tolerance on column masses.
pub const COLUMN_MASS_TOL: f64 = 1e-8;

/// Relative tolerance on the zero mode of the scattering operator.
pub const ZERO_MODE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorTag {
    L,
    TAlpha,
    LAlpha,
    AAlpha,
    BAlpha,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub tag: OperatorTag,
    pub alpha: f64,
    pub grid: RadialGrid,
    pub weights: WeightSpec,
    pub matrix: DMatrix<f64>,
    pub flags: Vec<String>,
}

impl OperatorMatrix {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(h)).iter().copied().collect()
    }

    /// `sum_i W_i A_ij` for each column.
    pub fn column_masses(&self) -> Vec<f64> {
        column_masses(&self.grid, &self.matrix)
    }

    /// Largest column mass relative to the column's absolute mass.
    pub fn column_mass_defect(&self) -> f64 {
        let w = &self.grid.weights;
        (0..self.n())
            .map(|j| {
                let col = self.matrix.column(j);
                let s: f64 = col.iter().zip(w).map(|(a, w)| a * w).sum();
                let abs: f64 = col.iter().zip(w).map(|(a, w)| (a * w).abs()).sum();
                if abs == 0.0 { 0.0 } else { s.abs() / abs }
            })
            .fold(0.0, f64::max)
    }

    /// Operator norm from the discrete Y space into X: the largest weighted
    /// column sum `sum_i |A_ij| x_i / y_j`.
    pub fn norm_y_to_x(&self) -> f64 {
        let x = self.grid.x_weights(&self.weights);
        let y = self.grid.y_weights(&self.weights);
        weighted_column_norm(&self.matrix, &x, &y)
    }

    /// Operator norm of the discrete X space into itself.
    pub fn norm_x_to_x(&self) -> f64 {
        let x = self.grid.x_weights(&self.weights);
        weighted_column_norm(&self.matrix, &x, &x)
    }

    fn with(&self, tag: OperatorTag, matrix: DMatrix<f64>) -> Self {
        Self { tag, alpha: self.alpha, grid: self.grid.clone(), weights: self.weights, matrix, flags: Vec::new() }
    }
}

pub(crate) fn column_masses(grid: &RadialGrid, m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(&grid.weights).map(|(a, w)| a * w).sum())
        .collect()
}

pub(crate) fn weighted_column_norm(m: &DMatrix<f64>, out_w: &[f64], in_w: &[f64]) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(out_w).map(|(a, w)| a.abs() * w).sum::<f64>() / in_w[j])
        .fold(0.0, f64::max)
}

/// Angular reduction rule.
#[derive(Debug, Clone)]
pub struct AngularRule {
    rule: Rule,
}

impl AngularRule {
    pub fn new(nodes: usize) -> Self {
        Self { rule: gauss_legendre(nodes) }
    }

    /// `(2 r s)^{-1} int_{|r-s|}^{r+s} g(rho) d rho`, integrated in `log rho`
    /// because the integrand has a layer of width `|r - s|` near the lower end.
    pub fn reduce(&self, r: f64, s: f64, g: impl Fn(f64) -> f64) -> f64 {
        let lo = (r - s).abs().max(1e-300).ln();
        let hi = (r + s).ln();
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let rho = (mid + half * x).exp();
            acc += w * rho * g(rho);
        }
        acc * half / (2.0 * r * s)
    }
}

impl Default for AngularRule {
    fn default() -> Self {
        Self::new(ANGULAR_NODES)
    }
}

/// `rho k(v, w)` for the scattering kernel, with `r = |v - u0|` the output
/// speed and `s = |w - u0|` the input speed.
pub fn scattering_rho_k(c: &KernelConstants, r: f64, s: f64, rho: f64) -> f64 {
    let t = rho + (r * r - s * s) / rho;
    c.c0 * (-c.beta0 * t * t).exp()
}

/// `rho K_alpha^1(v, w)`: the plane integral of `F` at distance
/// `|(s^2 - r^2 - rho^2)/(2 rho) + kappa rho|` from the centre.
pub fn gain1_rho_k(f: &RadialProfile, alpha: f64, r: f64, s: f64, rho: f64) -> f64 {
    let kappa = (alpha - 1.0) / (alpha + 1.0);
    let d = ((s * s - r * r - rho * rho) / (2.0 * rho) + kappa * rho).abs();
    gain_kernel_k1_constant(alpha) * 2.0 * PI * f.tail(d)
}

/// `rho K_alpha^2(v, w)`: `F` integrated over the sphere of pre-collision
/// partner velocities that send the `F`-particle to `v` after hitting `w`.
/// With `beta = (1 + alpha)/4` and `eps = 1 - 2 beta` the sphere has centre
/// `w + (1 - beta)(v - w)/eps` and radius `beta rho / eps`.
pub fn gain2_rho_k(f: &RadialProfile, alpha: f64, r: f64, s: f64, rho: f64) -> f64 {
    let beta = 0.25 * (1.0 + alpha);
    let eps = 1.0 - 2.0 * beta;
    let wy = 0.5 * (r * r - s * s - rho * rho);
    // eps * |centre| and eps * radius, free of cancellation at eps = 0
    let dc = ((1.0 - beta).powi(2) * rho * rho + eps * eps * s * s + 2.0 * eps * (1.0 - beta) * wy)
        .max(0.0)
        .sqrt();
    let rs = beta * rho;
    let c = gain_kernel_k1_constant(alpha) * 2.0 * PI;
    if dc < 1e-12 * rs {
        // sphere centred on u0: 2 pi (R/D) * 2 D R F(R) in the limit
        let radius = rs / eps;
        return c * 2.0 * radius * radius * f.value(radius);
    }
    let near = (((1.0 - beta) * r * r - beta * s * s + beta * rho * rho) / (dc + rs)).abs();
    let far = if eps > 0.0 { (dc + rs) / eps } else { f64::INFINITY };
    c * (rs / dc) * (f.tail(near) - f.tail(far))
}

/// The assembled pieces shared by every operator.
#[derive(Debug, Clone)]
pub struct Pieces {
    pub alpha: f64,
    /// Scattering gain `K` with corrected diagonal.
    pub scattering: DMatrix<f64>,
    /// Discrete `Sigma(r_j)`.
    pub big_sigma: Vec<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k3: DMatrix<f64>,
    /// Discrete `sigma_F(r_j)`.
    pub small_sigma: Vec<f64>,
}

/// Discrete `sum_i W_i F_i abar(r_i, r_j)`.
fn convolution(grid: &RadialGrid, f: &[f64]) -> Vec<f64> {
    grid.nodes
        .iter()
        .map(|&rj| {
            grid.nodes
                .iter()
                .zip(&grid.weights)
                .zip(f)
                .map(|((&ri, w), fi)| w * fi * shell_mean_speed(ri, rj))
                .sum()
        })
        .collect()
}

/// Gain matrix from `rho K`, columns in parallel, diagonal set so that
/// column `j` has mass `W_j * freq[j]`.
fn gain_matrix(
    grid: &RadialGrid,
    freq: &[f64],
    rho_k: impl Fn(f64, f64, f64) -> f64 + Sync,
) -> DMatrix<f64> {
    let n = grid.len();
    let ang = AngularRule::default();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let s = grid.nodes[j];
            let mut col = vec![0.0; n];
            let mut off = 0.0;
            for i in 0..n {
                if i == j {
                    continue;
                }
                let r = grid.nodes[i];
                let kbar = ang.reduce(r, s, |rho| rho_k(r, s, rho));
                col[i] = kbar * grid.weights[j];
                off += grid.weights[i] * col[i];
            }
            col[j] = freq[j] - off / grid.weights[j];
            col
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Raw angular averages `kbar(r_i, r_j)` without any diagonal correction.
pub fn reduced_kernel(
    grid: &RadialGrid,
    rho_k: impl Fn(f64, f64, f64) -> f64 + Sync,
) -> DMatrix<f64> {
    let n = grid.len();
    let ang = AngularRule::default();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let s = grid.nodes[j];
            (0..n)
                .map(|i| {
                    if i == j {
                        return 0.0;
                    }
                    let r = grid.nodes[i];
                    ang.reduce(r, s, |rho| rho_k(r, s, rho))
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

fn scattering_pieces(grid: &RadialGrid, c: &KernelConstants) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_bath(grid, c)?;
    let big_sigma = convolution(grid, &grid.maxwellian());
    let k = gain_matrix(grid, &big_sigma, |r, s, rho| scattering_rho_k(c, r, s, rho));
    Ok((k, big_sigma))
}

fn check_bath(grid: &RadialGrid, c: &KernelConstants) -> Result<()> {
    if grid.bath != c.bath {
        return Err(invalid("kernel constants were calibrated for a different bath"));
    }
    if !(c.c0 > 0.0 && c.beta0 > 0.0) {
        return Err(invalid("kernel constants must be positive"));
    }
    Ok(())
}

/// Pieces of `L`, `T_alpha` and the splitting for the steady profile `f`.
pub fn assemble_pieces(
    grid: &RadialGrid,
    constants: &KernelConstants,
    f: &RadialProfile,
    params: RestitutionParams,
) -> Result<Pieces> {
    let alpha = params.alpha();
    let (scattering, big_sigma) = scattering_pieces(grid, constants)?;
    let fv = f.nodal(grid);
    let small_sigma = convolution(grid, &fv);
    let k1 = gain_matrix(grid, &small_sigma, |r, s, rho| gain1_rho_k(f, alpha, r, s, rho));
    let k2 = gain_matrix(grid, &small_sigma, |r, s, rho| gain2_rho_k(f, alpha, r, s, rho));
    let n = grid.len();
    let k3 = DMatrix::from_fn(n, n, |i, j| {
        fv[i] * shell_mean_speed(grid.nodes[i], grid.nodes[j]) * grid.weights[j]
    });
    Ok(Pieces { alpha, scattering, big_sigma, k1, k2, k3, small_sigma })
}

fn finish(mut op: OperatorMatrix) -> OperatorMatrix {
    let defect = op.column_mass_defect();
    if defect > COLUMN_MASS_TOL {
        op.flags.push(format!("column mass defect {defect:.3e}"));
    }
    op
}

impl Pieces {
    pub fn l(&self, grid: &RadialGrid, weights: WeightSpec) -> OperatorMatrix {
        let m = &self.scattering - DMatrix::from_diagonal(&DVector::from_column_slice(&self.big_sigma));
        let op = OperatorMatrix { tag: OperatorTag::L, alpha: 1.0, grid: grid.clone(), weights, matrix: m, flags: Vec::new() };
        finish(flag_zero_mode(op))
    }

    pub fn t_alpha(&self, grid: &RadialGrid, weights: WeightSpec) -> OperatorMatrix {
        let m = &self.k1 + &self.k2
            - &self.k3
            - DMatrix::from_diagonal(&DVector::from_column_slice(&self.small_sigma));
        finish(OperatorMatrix { tag: OperatorTag::TAlpha, alpha: self.alpha, grid: grid.clone(), weights, matrix: m, flags: Vec::new() })
    }

    pub fn l_alpha(&self, grid: &RadialGrid, weights: WeightSpec) -> OperatorMatrix {
        let l = self.l(grid, weights);
        let t = self.t_alpha(grid, weights);
        let mut op = l.with(OperatorTag::LAlpha, &l.matrix + &t.matrix);
        op.alpha = self.alpha;
        finish(op)
    }

    /// `B` keeps the gain columns with `r_j > r_cut` (off the diagonal) and
    /// the full loss diagonal; `A = L_alpha - B`.
    pub fn splitting(&self, grid: &RadialGrid, weights: WeightSpec, r_cut: f64) -> Result<(OperatorMatrix, OperatorMatrix)> {
        if !(r_cut > grid.nodes[0] && r_cut < *grid.nodes.last().unwrap()) {
            return Err(invalid(format!("cut radius {r_cut} lies outside the grid")));
        }
        let n = grid.len();
        let first = grid.first_beyond(r_cut);
        let gain = &self.scattering + &self.k1 + &self.k2;
        let b = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -(self.big_sigma[i] + self.small_sigma[i])
            } else if j >= first {
                gain[(i, j)]
            } else {
                0.0
            }
        });
        let la = self.l_alpha(grid, weights);
        let a = &la.matrix - &b;
        Ok((la.with(OperatorTag::AAlpha, a), la.with(OperatorTag::BAlpha, b)))
    }
}

fn flag_zero_mode(mut op: OperatorMatrix) -> OperatorMatrix {
    let res = scattering_zero_mode_residual(&op);
    if res > ZERO_MODE_TOL {
        op.flags.push(format!("zero-mode residual {res:.3e}"));
    }
    op
}

/// `|L M_h| / (|L| |M_h|)` in the max norm.
pub fn scattering_zero_mode_residual(op: &OperatorMatrix) -> f64 {
    let m = op.grid.maxwellian();
    let lm = op.apply(&m);
    let num = lm.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let norm_l = (0..op.n()).map(|i| op.matrix.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let norm_m = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    num / (norm_l * norm_m)
}

/// The linearized scattering operator `L h = K h - Sigma h`.
pub fn assemble_l(grid: &RadialGrid, constants: &KernelConstants, weights: WeightSpec) -> Result<OperatorMatrix> {
    let (k, big_sigma) = scattering_pieces(grid, constants)?;
    let m = k - DMatrix::from_diagonal(&DVector::from_column_slice(&big_sigma));
    let op = OperatorMatrix { tag: OperatorTag::L, alpha: 1.0, grid: grid.clone(), weights, matrix: m, flags: Vec::new() };
    Ok(finish(flag_zero_mode(op)))
}

/// `T_alpha h = Q_alpha(h, F) + Q_alpha(F, h)`.
pub fn assemble_t_alpha(
    grid: &RadialGrid,
    constants: &KernelConstants,
    f: &RadialProfile,
    params: RestitutionParams,
    weights: WeightSpec,
) -> Result<OperatorMatrix> {
    check_profile(grid, f)?;
    Ok(assemble_pieces(grid, constants, f, params)?.t_alpha(grid, weights))
}

/// `L_alpha = T_alpha + L`.
pub fn assemble_l_alpha(
    grid: &RadialGrid,
    constants: &KernelConstants,
    f: &RadialProfile,
    params: RestitutionParams,
    weights: WeightSpec,
) -> Result<OperatorMatrix> {
    check_profile(grid, f)?;
    Ok(assemble_pieces(grid, constants, f, params)?.l_alpha(grid, weights))
}

pub fn assemble_splitting(
    grid: &RadialGrid,
    constants: &KernelConstants,
    f: &RadialProfile,
    params: RestitutionParams,
    weights: WeightSpec,
    r_cut: f64,
) -> Result<(OperatorMatrix, OperatorMatrix)> {
    check_profile(grid, f)?;
    assemble_pieces(grid, constants, f, params)?.splitting(grid, weights, r_cut)
}

fn check_profile(grid: &RadialGrid, f: &RadialProfile) -> Result<()> {
    let mass = grid.mass(&f.nodal(grid));
    if (mass - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("steady profile has mass {mass}, expected 1")));
    }
    if f.nodal(grid).iter().any(|&x| x < 0.0) {
        return Err(invalid("steady profile is negative somewhere"));
    }
    Ok(())
}
