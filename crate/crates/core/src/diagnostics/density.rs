use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{shell_mean_speed, BathMaxwellian, DensityFn, Velocity, WeightSpec};
use crate::quadrature::gauss_legendre;

/// Binning of velocity space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    /// Spherical shells `edges[b] <= |v - center| < edges[b+1]`, `edges[0] = 0`.
    Radial { center: Velocity, edges: Vec<f64> },
    /// Regular cubes of side `spacing` with lower corner `lo`.
    Cartesian { lo: Velocity, spacing: f64, cells: [usize; 3] },
}

/// Description of a grid to build from samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    Radial { center: Velocity, edges: Vec<f64> },
    /// `bins` uniform shells on `[0, r_max]`.
    RadialUniform { center: Velocity, bins: usize, r_max: f64 },
    Cartesian { lo: Velocity, spacing: f64, cells: [usize; 3] },
}

impl GridSpec {
    /// Default radial binning: `N^{1/4}` uniform shells about the bath velocity,
    /// wide enough for the bath and the given samples.
    pub fn default_radial(samples: &[Velocity], bath: &BathMaxwellian) -> Self {
        let bins = ((samples.len() as f64).powf(0.25).round() as usize).max(8);
        let far = samples
            .iter()
            .map(|&v| (v - bath.u0).norm())
            .fold(0.0, f64::max);
        let r_max = (7.0 * bath.theta0.sqrt()).max(far * 1.000_001);
        GridSpec::RadialUniform { center: bath.u0, bins, r_max }
    }

    pub fn grid(&self) -> Result<Grid> {
        match self {
            GridSpec::Radial { center, edges } => {
                check_edges(edges)?;
                Ok(Grid::Radial { center: *center, edges: edges.clone() })
            }
            GridSpec::RadialUniform { center, bins, r_max } => {
                if *bins == 0 || !(*r_max > 0.0) {
                    return Err(invalid("radial grid needs bins > 0 and r_max > 0"));
                }
                let edges = (0..=*bins).map(|k| r_max * k as f64 / *bins as f64).collect();
                Ok(Grid::Radial { center: *center, edges })
            }
            GridSpec::Cartesian { lo, spacing, cells } => {
                if !(*spacing > 0.0) || cells.iter().any(|&c| c == 0) {
                    return Err(invalid("cartesian grid needs positive spacing and cells"));
                }
                Ok(Grid::Cartesian { lo: *lo, spacing: *spacing, cells: *cells })
            }
        }
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges[0] != 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("radial edges must start at 0 and increase strictly"));
    }
    Ok(())
}

fn shell_volume(a: f64, b: f64) -> f64 {
    4.0 * PI / 3.0 * (b * b * b - a * a * a)
}

/// Nonnegative binned estimate of a velocity density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    grid: Grid,
    masses: Vec<f64>,
    escaped: f64,
    anisotropy: Option<f64>,
    samples: usize,
}

impl DensityEstimate {
    /// Histogram of equally weighted samples (weight `1/N` each).
    pub fn from_samples(samples: &[Velocity], spec: &GridSpec) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::ZeroMass);
        }
        let grid = spec.grid()?;
        let w = 1.0 / samples.len() as f64;
        let mut masses = vec![0.0; grid_len(&grid)];
        let mut escaped = 0.0;
        for &v in samples {
            match locate(&grid, v) {
                Some(b) => masses[b] += w,
                None => escaped += w,
            }
        }
        let anisotropy = Some(anisotropy_score(samples, grid_center(&grid)));
        Ok(Self { grid, masses, escaped, anisotropy, samples: samples.len() })
    }

    /// Radial estimate from explicit bin masses.
    pub fn from_radial_masses(center: Velocity, edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        check_edges(&edges)?;
        if masses.len() + 1 != edges.len() {
            return Err(invalid("need one mass per radial bin"));
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(invalid("bin masses must be nonnegative"));
        }
        Ok(Self { grid: Grid::Radial { center, edges }, masses, escaped: 0.0, anisotropy: None, samples: 0 })
    }

    /// Bath Maxwellian with analytic shell masses on `edges`.
    pub fn binned_maxwellian(m: &BathMaxwellian, edges: Vec<f64>) -> Result<Self> {
        let masses = edges.windows(2).map(|w| m.shell_mass(w[0], w[1])).collect();
        let mut est = Self::from_radial_masses(m.u0, edges, masses)?;
        est.escaped = m.speed_sf(*est.edges().last().unwrap());
        Ok(est)
    }

    /// Radial estimate from a radial density `rho(r)` integrated over each shell.
    pub fn binned_radial(center: Velocity, edges: Vec<f64>, rho: impl Fn(f64) -> f64) -> Result<Self> {
        let gl = gauss_legendre(12);
        let masses = edges
            .windows(2)
            .map(|w| 4.0 * PI * gl.mapped(w[0], w[1]).integrate(|r| r * r * rho(r)))
            .collect();
        Self::from_radial_masses(center, edges, masses)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of samples behind a histogram; 0 for analytic estimates.
    pub fn sample_count(&self) -> usize {
        self.samples
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the samples that fell outside the grid.
    pub fn escaped_mass(&self) -> f64 {
        self.escaped
    }

    /// True when at least 99.9% of the mass is on the grid.
    pub fn coverage_ok(&self) -> bool {
        self.escaped <= 1e-3
    }

    /// Anisotropy of the sample second moments about the grid center (0 for isotropic).
    pub fn anisotropy(&self) -> Option<f64> {
        self.anisotropy
    }

    pub fn center(&self) -> Velocity {
        grid_center(&self.grid)
    }

    /// Radial edges; empty for cartesian grids.
    pub fn edges(&self) -> &[f64] {
        match &self.grid {
            Grid::Radial { edges, .. } => edges,
            Grid::Cartesian { .. } => &[],
        }
    }

    /// Representative speed of each bin (radial) or cell center distance from the origin.
    pub fn bin_speeds(&self) -> Vec<f64> {
        match &self.grid {
            Grid::Radial { edges, .. } => edges
                .windows(2)
                .map(|w| (0.5 * (w[0] * w[0] + w[1] * w[1])).sqrt())
                .collect(),
            Grid::Cartesian { .. } => (0..self.masses.len())
                .map(|k| self.cell_center(k).norm())
                .collect(),
        }
    }

    fn bin_volumes(&self) -> Vec<f64> {
        match &self.grid {
            Grid::Radial { edges, .. } => edges.windows(2).map(|w| shell_volume(w[0], w[1])).collect(),
            Grid::Cartesian { spacing, .. } => vec![spacing.powi(3); self.masses.len()],
        }
    }

    /// Mean density in each bin.
    pub fn bin_densities(&self) -> Vec<f64> {
        self.masses
            .iter()
            .zip(self.bin_volumes())
            .map(|(m, vol)| m / vol)
            .collect()
    }

    fn cell_center(&self, k: usize) -> Velocity {
        match &self.grid {
            Grid::Cartesian { lo, spacing, cells } => {
                let i = k % cells[0];
                let j = (k / cells[0]) % cells[1];
                let l = k / (cells[0] * cells[1]);
                *lo + Velocity::new(
                    (i as f64 + 0.5) * spacing,
                    (j as f64 + 0.5) * spacing,
                    (l as f64 + 0.5) * spacing,
                )
            }
            Grid::Radial { .. } => unreachable!("cell centers exist only on cartesian grids"),
        }
    }

    /// Pointwise density. Radial estimates interpolate `log f` linearly in `r^2`
    /// between bin representatives (exact for centered Gaussians); zero outside the grid.
    pub fn density_at(&self, v: Velocity) -> f64 {
        match &self.grid {
            Grid::Cartesian { .. } => match locate(&self.grid, v) {
                Some(k) => self.masses[k] / self.bin_volumes()[k],
                None => 0.0,
            },
            Grid::Radial { center, edges } => {
                let r = (v - *center).norm();
                let Some(b) = locate_shell(edges, r) else { return 0.0 };
                let dens = |k: usize| self.masses[k] / shell_volume(edges[k], edges[k + 1]);
                let node = |k: usize| 0.5 * (edges[k] * edges[k] + edges[k + 1] * edges[k + 1]);
                let d_b = dens(b);
                let nb = edges.len() - 1;
                if nb == 1 || d_b == 0.0 {
                    return d_b;
                }
                let u = r * r;
                let k = if (u >= node(b) && b + 1 < nb) || b == 0 { b + 1 } else { b - 1 };
                let d_k = dens(k);
                if d_k == 0.0 {
                    return d_b;
                }
                let slope = (d_k.ln() - d_b.ln()) / (node(k) - node(b));
                (d_b.ln() + slope * (u - node(b))).exp()
            }
        }
    }

    /// `int f(w) |v - w| dw` with the mass of each shell spread uniformly over it.
    pub fn convolve_speed(&self, v: Velocity) -> f64 {
        match &self.grid {
            Grid::Cartesian { .. } => self
                .masses
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(|(k, &m)| m * (v - self.cell_center(k)).norm())
                .sum(),
            Grid::Radial { center, edges } => {
                let r = (v - *center).norm();
                let gl = gauss_legendre(4);
                edges
                    .windows(2)
                    .zip(&self.masses)
                    .filter(|(_, &m)| m > 0.0)
                    .map(|(w, &m)| {
                        let rule = gl.mapped(w[0], w[1]);
                        let num = rule.integrate(|s| s * s * shell_mean_speed(r, s));
                        let den = rule.integrate(|s| s * s);
                        m * num / den
                    })
                    .sum()
            }
        }
    }

    /// Weighted L1 distances `(X, Y)` between two estimates on the same radial grid.
    pub fn distance(&self, other: &DensityEstimate, weights: &WeightSpec) -> Result<(f64, f64)> {
        if self.grid != other.grid {
            return Err(invalid("distance needs identical grids"));
        }
        let diff: Vec<(f64, f64)> = self
            .bin_speeds()
            .into_iter()
            .zip(self.masses.iter().zip(&other.masses).map(|(a, b)| a - b))
            .collect();
        Ok((weights.x_norm(diff.iter().copied()), weights.y_norm(diff.iter().copied())))
    }

    /// `(X, Y)` norms of the estimate itself.
    pub fn norms(&self, weights: &WeightSpec) -> (f64, f64) {
        let items: Vec<(f64, f64)> = self.bin_speeds().into_iter().zip(self.masses.iter().copied()).collect();
        (weights.x_norm(items.iter().copied()), weights.y_norm(items.iter().copied()))
    }

    /// Pointwise average of estimates on a common grid.
    pub fn average(estimates: &[DensityEstimate]) -> Result<DensityEstimate> {
        let first = estimates.first().ok_or(Error::ZeroMass)?;
        if estimates.iter().any(|e| e.grid != first.grid) {
            return Err(invalid("averaging needs identical grids"));
        }
        let n = estimates.len() as f64;
        let mut masses = vec![0.0; first.masses.len()];
        let mut escaped = 0.0;
        for e in estimates {
            for (acc, m) in masses.iter_mut().zip(&e.masses) {
                *acc += m / n;
            }
            escaped += e.escaped / n;
        }
        let anis: Vec<f64> = estimates.iter().filter_map(|e| e.anisotropy).collect();
        let anisotropy = (!anis.is_empty()).then(|| anis.iter().sum::<f64>() / anis.len() as f64);
        let samples = estimates.iter().map(|e| e.samples).sum();
        Ok(DensityEstimate { grid: first.grid.clone(), masses, escaped, anisotropy, samples })
    }
}

impl DensityFn for DensityEstimate {
    fn eval(&self, v: Velocity) -> f64 {
        self.density_at(v)
    }
}

fn grid_len(grid: &Grid) -> usize {
    match grid {
        Grid::Radial { edges, .. } => edges.len() - 1,
        Grid::Cartesian { cells, .. } => cells.iter().product(),
    }
}

fn grid_center(grid: &Grid) -> Velocity {
    match grid {
        Grid::Radial { center, .. } => *center,
        Grid::Cartesian { lo, spacing, cells } => {
            *lo + Velocity::new(cells[0] as f64, cells[1] as f64, cells[2] as f64) * (0.5 * spacing)
        }
    }
}

fn locate_shell(edges: &[f64], r: f64) -> Option<usize> {
    if !(r < *edges.last().unwrap()) {
        return None;
    }
    Some(edges.partition_point(|&e| e <= r) - 1)
}

fn locate(grid: &Grid, v: Velocity) -> Option<usize> {
    match grid {
        Grid::Radial { center, edges } => locate_shell(edges, (v - *center).norm()),
        Grid::Cartesian { lo, spacing, cells } => {
            let d = (v - *lo).to_array();
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let x = (d[a] / spacing).floor();
                if !(x >= 0.0 && x < cells[a] as f64) {
                    return None;
                }
                idx[a] = x as usize;
            }
            Some(idx[0] + cells[0] * (idx[1] + cells[1] * idx[2]))
        }
    }
}

/// Normalized departure from isotropy: Frobenius norm of the traceless part of
/// the second-moment tensor about `center`, plus the squared mean offset, both
/// relative to the mean diagonal.
pub fn anisotropy_score(samples: &[Velocity], center: Velocity) -> f64 {
    let n = samples.len() as f64;
    let mut mean = Velocity::ZERO;
    let mut t = [[0.0; 3]; 3];
    for &v in samples {
        let d = (v - center).to_array();
        mean += Velocity::from_array(d) * (1.0 / n);
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] += d[i] * d[j] / n;
            }
        }
    }
    let tr = (t[0][0] + t[1][1] + t[2][2]) / 3.0;
    if tr == 0.0 {
        return 0.0;
    }
    let mut dev = 0.0;
    for (i, row) in t.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let y = x - if i == j { tr } else { 0.0 };
            dev += y * y;
        }
    }
    (dev.sqrt() + mean.norm_sq()) / tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_samples(n: usize, theta: f64, seed: u64) -> Vec<Velocity> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = theta.sqrt();
        (0..n)
            .map(|_| {
                let mut c = || -> f64 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                };
                Velocity::new(c(), c(), c())
            })
            .collect()
    }

    #[test]
    fn histogram_of_maxwellian_matches_bin_masses() {
        let m = BathMaxwellian::standard();
        let samples = gaussian_samples(1_000_000, 1.0, 1);
        let spec = GridSpec::RadialUniform { center: Velocity::ZERO, bins: 32, r_max: 7.0 };
        let est = DensityEstimate::from_samples(&samples, &spec).unwrap();
        let exact = DensityEstimate::binned_maxwellian(&m, est.edges().to_vec()).unwrap();
        let l1: f64 = est.masses().iter().zip(exact.masses()).map(|(a, b)| (a - b).abs()).sum();
        // expected multinomial L1 error sum_b sqrt(2 p_b (1-p_b) / (pi N))
        let binning: f64 = exact
            .masses()
            .iter()
            .map(|p| (2.0 * p * (1.0 - p) / (PI * 1e6)).sqrt())
            .sum();
        assert!(l1 <= 2.0 * binning, "{l1} vs {binning}");
        assert!(est.coverage_ok());
        assert!(est.anisotropy().unwrap() < 0.02);
    }

    #[test]
    fn point_mass_in_one_bin() {
        let samples = vec![Velocity::new(0.5, 0.0, 0.0); 10];
        let spec = GridSpec::RadialUniform { center: Velocity::ZERO, bins: 4, r_max: 2.0 };
        let est = DensityEstimate::from_samples(&samples, &spec).unwrap();
        assert!((est.masses()[1] - 1.0).abs() < 1e-15);
        assert_eq!(est.total_mass() - est.masses()[1], 0.0);
        // convolution at a far velocity approaches the distance from the shell
        let far = est.convolve_speed(Velocity::new(100.0, 0.0, 0.0));
        assert!((far - 100.0).abs() < 1e-2);
    }

    #[test]
    fn anisotropic_beam_is_flagged() {
        let mut samples = gaussian_samples(10_000, 0.01, 2);
        for v in samples.iter_mut() {
            v.x += 2.0;
        }
        assert!(anisotropy_score(&samples, Velocity::ZERO) > 1.0);
    }

    #[test]
    fn escaped_mass_is_reported() {
        let samples = vec![Velocity::new(0.1, 0.0, 0.0), Velocity::new(5.0, 0.0, 0.0)];
        let spec = GridSpec::RadialUniform { center: Velocity::ZERO, bins: 2, r_max: 1.0 };
        let est = DensityEstimate::from_samples(&samples, &spec).unwrap();
        assert_eq!(est.escaped_mass(), 0.5);
        assert!(!est.coverage_ok());
    }

    #[test]
    fn log_interpolation_is_exact_for_binned_gaussian_profile() {
        // bins built from exact point values at the representative radii
        let theta: f64 = 2.0;
        let edges: Vec<f64> = (0..=20).map(|k| 0.4 * k as f64).collect();
        let rho = |r: f64| (-r * r / (2.0 * theta)).exp();
        let masses = edges
            .windows(2)
            .map(|w| rho((0.5 * (w[0] * w[0] + w[1] * w[1])).sqrt()) * shell_volume(w[0], w[1]))
            .collect();
        let est = DensityEstimate::from_radial_masses(Velocity::ZERO, edges, masses).unwrap();
        for r in [0.05, 0.9, 3.3, 7.9] {
            let got = est.density_at(Velocity::new(0.0, r, 0.0));
            assert!((got / rho(r) - 1.0).abs() < 1e-12, "r={r}");
        }
        assert_eq!(est.density_at(Velocity::new(9.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn convolution_matches_bath_frequency() {
        let m = BathMaxwellian::standard();
        let edges: Vec<f64> = (0..=160).map(|k| 0.05 * k as f64).collect();
        let est = DensityEstimate::binned_maxwellian(&m, edges).unwrap();
        for r in [0.0, 1.0, 3.0] {
            let v = Velocity::new(r, 0.0, 0.0);
            let exact = crate::kinetics::sigma_bath_closed_form(&m, v);
            assert!((est.convolve_speed(v) - exact).abs() < 1e-3 * exact);
        }
    }

    #[test]
    fn cartesian_histogram() {
        let samples = vec![Velocity::new(0.25, 0.25, 0.25), Velocity::new(0.75, 0.25, 0.25)];
        let spec = GridSpec::Cartesian { lo: Velocity::ZERO, spacing: 0.5, cells: [2, 1, 1] };
        let est = DensityEstimate::from_samples(&samples, &spec).unwrap();
        assert_eq!(est.masses(), &[0.5, 0.5]);
        assert_eq!(est.density_at(Velocity::new(0.1, 0.1, 0.1)), 0.5 / 0.125);
    }
}
