//! Explicit integral kernels of the gain operators.
//!
//! The scattering kernel `k` represents `Q_1^+(h, M)`:
//! `k(v,w) = C0 |v-w|^{-1} exp(-beta0 (|v-w| + (|v-u0|^2 - |w-u0|^2)/|v-w|)^2)`
//! with `beta0 = 1/(8 theta0)`. `C0` is fixed by requiring
//! `Sigma(v) = int k(w, v) dw`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::frequency::sigma_bath_closed_form;
use super::{BathMaxwellian, DensityFn, RestitutionParams, Velocity};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_hermite, gauss_legendre, Rule};

/// Upper Maxwellian `amplitude * M(u1, theta1)` dominating a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperMaxwellian {
    pub amplitude: f64,
    pub u1: Velocity,
    pub theta1: f64,
}

impl UpperMaxwellian {
    pub fn beta1(&self) -> f64 {
        1.0 / (8.0 * self.theta1)
    }

    pub fn density(&self, v: Velocity) -> f64 {
        self.amplitude
            * (2.0 * PI * self.theta1).powf(-1.5)
            * (-(v - self.u1).norm_sq() / (2.0 * self.theta1)).exp()
    }

    /// Prefactor of the dominating gain kernel at restitution `alpha`.
    pub fn cbar(&self, params: RestitutionParams) -> f64 {
        gain_kernel_k1_constant(params.alpha()) * self.amplitude
            / (2.0 * PI * self.theta1).sqrt()
    }
}

/// Constants of the scattering kernel, plus the optional dominating Maxwellian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub c0: f64,
    pub beta0: f64,
    pub bath: BathMaxwellian,
    pub upper: Option<UpperMaxwellian>,
}

impl KernelConstants {
    pub fn with_upper(mut self, upper: UpperMaxwellian) -> Self {
        self.upper = Some(upper);
        self
    }
}

/// Result of the `C0` calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub constants: KernelConstants,
    /// `Sigma(v) / int k_hat(w, v) dw` at each probe.
    pub ratios: Vec<f64>,
    /// `(max - min) / mean` of the ratios.
    pub spread: f64,
    /// Estimated quadrature error of the kernel mass integrals.
    pub quadrature_residual: f64,
}

#[inline]
fn gaussian_factor(beta: f64, shift: f64, rho: f64, diff_sq: f64) -> f64 {
    let t = shift * rho + diff_sq / rho;
    (-beta * t * t).exp()
}

/// `k(v, w)`; the diagonal `v = w` is singular.
pub fn scattering_kernel_k(v: Velocity, w: Velocity, c: &KernelConstants) -> Result<f64> {
    let rho = (v - w).norm();
    if rho == 0.0 {
        return Err(Error::SingularPoint);
    }
    let u = c.bath.u0;
    let d = (v - u).norm_sq() - (w - u).norm_sq();
    Ok(c.c0 / rho * gaussian_factor(c.beta0, 1.0, rho, d))
}

/// `Kbar(v, w)` dominating the gain kernel of `Q_alpha^+(., F)` when `F <= Mbar`.
pub fn gain_kernel_upper(
    v: Velocity,
    w: Velocity,
    params: RestitutionParams,
    c: &KernelConstants,
) -> Result<f64> {
    let upper = c
        .upper
        .ok_or_else(|| invalid("kernel constants carry no upper Maxwellian"))?;
    let rho = (v - w).norm();
    if rho == 0.0 {
        return Err(Error::SingularPoint);
    }
    let d = (v - upper.u1).norm_sq() - (w - upper.u1).norm_sq();
    Ok(upper.cbar(params) / rho
        * gaussian_factor(upper.beta1(), 1.0 + params.mu_alpha(), rho, d))
}

/// Prefactor `C_alpha` of the plane-integral gain kernel, fixed by the mass
/// identity `int K_alpha^1(v, w) dv = sigma_F(w)`.
pub fn gain_kernel_k1_constant(alpha: f64) -> f64 {
    4.0 / (PI * (1.0 + alpha) * (1.0 + alpha))
}

/// Tensor Gauss–Hermite rule on a plane, with a Gaussian envelope
/// `exp(-|x - center|^2 / (2 theta))` factored out of the integrand.
#[derive(Debug, Clone)]
pub struct PlaneQuadrature {
    rule: Rule,
    pub center: Velocity,
    pub theta: f64,
}

impl PlaneQuadrature {
    pub const DEFAULT_NODES: usize = 32;

    pub fn new(nodes: usize, center: Velocity, theta: f64) -> Self {
        Self { rule: gauss_hermite(nodes), center, theta }
    }

    /// `int_{x in plane} f(x) dx` over the plane through `p0` with unit normal `n`.
    pub fn integrate(&self, p0: Velocity, n: Velocity, f: &dyn DensityFn) -> f64 {
        let (e1, e2) = n.orthonormal_complement();
        let foot = self.center + n * (p0 - self.center).dot(n);
        let scale = (2.0 * self.theta).sqrt();
        let mut total = 0.0;
        for (&xa, &wa) in self.rule.nodes.iter().zip(&self.rule.weights) {
            for (&xb, &wb) in self.rule.nodes.iter().zip(&self.rule.weights) {
                let x = foot + e1 * (scale * xa) + e2 * (scale * xb);
                total += wa * wb * f.eval(x) * (xa * xa + xb * xb).exp();
            }
        }
        2.0 * self.theta * total
    }
}

/// `K_alpha^1(v, w) = C_alpha / |v-w| * int_{V . (w-v) = 0} F(v + V + (alpha-1)/(alpha+1) (w-v)) dV`.
pub fn gain_kernel_k1(
    v: Velocity,
    w: Velocity,
    params: RestitutionParams,
    f: &dyn DensityFn,
    quad: &PlaneQuadrature,
) -> Result<f64> {
    let rho = (w - v).norm();
    if rho == 0.0 {
        return Err(Error::SingularPoint);
    }
    let alpha = params.alpha();
    let n = (w - v) * (1.0 / rho);
    let p0 = v + (w - v) * ((alpha - 1.0) / (alpha + 1.0));
    Ok(gain_kernel_k1_constant(alpha) / rho * quad.integrate(p0, n, f))
}

/// `int k_hat(w, v) dw` with unit prefactor, reduced to a double radial
/// integral about the bulk velocity.
fn kernel_mass(m: &BathMaxwellian, beta0: f64, v: Velocity, order: usize) -> f64 {
    let r = (v - m.u0).norm();
    if r == 0.0 {
        // k_hat(w, u0) = exp(-4 beta0 s^2)/s
        return PI / (2.0 * beta0);
    }
    let gl = gauss_legendre(order);
    let st = (1.0 / (8.0 * beta0)).sqrt();
    // near s = r the rho integrand varies on the scale |r - s|, so integrate
    // in log rho and grade the outer panels geometrically towards s = r
    let inner = |s: f64| {
        let lo = (r - s).abs();
        let hi = r + s;
        let d = s * s - r * r;
        let rho_rule = gl.mapped(lo.ln(), hi.ln());
        let avg = rho_rule.integrate(|u| {
            let rho = u.exp();
            rho * gaussian_factor(beta0, 1.0, rho, d)
        }) / (2.0 * r * s);
        4.0 * PI * s * s * avg
    };
    let mut total = 0.0;
    for (a, b) in graded_panels(r, 0.0).chain(graded_panels(r, r + 16.0 * st)) {
        total += gl.mapped(a, b).integrate(inner);
    }
    total
}

/// Panels between `far` and `pole`, halving in width towards `pole`.
fn graded_panels(pole: f64, far: f64) -> impl Iterator<Item = (f64, f64)> {
    const LEVELS: i32 = 40;
    let span = far - pole;
    (0..LEVELS).map(move |k| {
        let a = pole + span * 0.5f64.powi(k);
        let b = pole + span * 0.5f64.powi(k + 1);
        if a < b { (a, b) } else { (b, a) }
    })
}

/// Calibrates `C0` from `Sigma(v) = int k(w, v) dw` at the probe velocities.
pub fn calibrate_c0(m: &BathMaxwellian, probes: &[Velocity]) -> Result<Calibration> {
    if probes.is_empty() {
        return Err(invalid("calibration needs at least one probe velocity"));
    }
    let beta0 = 1.0 / (8.0 * m.theta0);
    let mut ratios = Vec::with_capacity(probes.len());
    let mut residual: f64 = 0.0;
    for &p in probes {
        let fine = kernel_mass(m, beta0, p, 40);
        let coarse = kernel_mass(m, beta0, p, 28);
        residual = residual.max((fine - coarse).abs() / fine);
        ratios.push(sigma_bath_closed_form(m, p) / fine);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (max - min) / mean;
    if spread > 1e-4 {
        return Err(Error::Calibration { spread, limit: 1e-4 });
    }
    Ok(Calibration {
        constants: KernelConstants { c0: mean, beta0, bath: *m, upper: None },
        ratios,
        spread,
        quadrature_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SphereRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constants() -> KernelConstants {
        let probes = [
            Velocity::ZERO,
            Velocity::new(1.0, 0.0, 0.0),
            Velocity::new(0.0, 2.0, 0.0),
        ];
        calibrate_c0(&BathMaxwellian::standard(), &probes).unwrap().constants
    }

    fn random_velocity(rng: &mut ChaCha8Rng, scale: f64) -> Velocity {
        Velocity::new(
            scale * (rng.random::<f64>() - 0.5),
            scale * (rng.random::<f64>() - 0.5),
            scale * (rng.random::<f64>() - 0.5),
        )
    }

    #[test]
    fn calibration_is_point_independent() {
        let m = BathMaxwellian::standard();
        let probes = [
            Velocity::ZERO,
            Velocity::new(1.0, 0.0, 0.0),
            Velocity::new(0.0, 2.0, 0.0),
            Velocity::new(0.0, 0.0, 4.0),
        ];
        let cal = calibrate_c0(&m, &probes).unwrap();
        assert!(cal.spread <= 1e-6, "spread {}", cal.spread);
        // the calibrated constant reproduces 1 / (pi sqrt(2 pi theta0))
        let expected = 1.0 / (PI * (2.0 * PI).sqrt());
        assert!((cal.constants.c0 - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn calibration_scales_with_temperature() {
        let probes = [Velocity::ZERO, Velocity::new(1.0, 0.0, 0.0), Velocity::new(0.0, 2.0, 0.0)];
        let c1 = calibrate_c0(&BathMaxwellian::standard(), &probes).unwrap();
        let m4 = BathMaxwellian::new(Velocity::new(0.3, 0.0, 0.0), 4.0).unwrap();
        let c4 = calibrate_c0(&m4, &probes).unwrap();
        assert!(c4.spread <= 1e-6);
        assert!((c4.constants.c0 * 2.0 - c1.constants.c0).abs() < 1e-9);
    }

    #[test]
    fn single_probe_calibration() {
        let cal = calibrate_c0(&BathMaxwellian::standard(), &[Velocity::ZERO]).unwrap();
        assert_eq!(cal.spread, 0.0);
        assert!(calibrate_c0(&BathMaxwellian::standard(), &[]).is_err());
    }

    #[test]
    fn detailed_balance() {
        let c = constants();
        let m = c.bath;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = random_velocity(&mut rng, 6.0);
            let w = random_velocity(&mut rng, 6.0);
            let lhs = scattering_kernel_k(v, w, &c).unwrap() * m.density(w);
            let rhs = scattering_kernel_k(w, v, &c).unwrap() * m.density(v);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
        }
    }

    #[test]
    fn diagonal_is_singular() {
        let c = constants();
        let v = Velocity::new(1.0, 1.0, 1.0);
        assert!(matches!(scattering_kernel_k(v, v, &c), Err(Error::SingularPoint)));
    }

    fn upper() -> UpperMaxwellian {
        UpperMaxwellian { amplitude: 1.5, u1: Velocity::ZERO, theta1: 1.2 }
    }

    #[test]
    fn upper_kernel_elastic_collapses_to_k_form() {
        let up = upper();
        let c = constants().with_upper(up);
        let kform = KernelConstants {
            c0: up.cbar(RestitutionParams::elastic()),
            beta0: up.beta1(),
            bath: BathMaxwellian::new(up.u1, up.theta1).unwrap(),
            upper: None,
        };
        let v = Velocity::new(0.3, -1.0, 2.0);
        let w = Velocity::new(-0.4, 0.5, 0.1);
        let a = gain_kernel_upper(v, w, RestitutionParams::elastic(), &c).unwrap();
        let b = scattering_kernel_k(v, w, &kform).unwrap();
        assert!((a - b).abs() < 1e-15 * a);
    }

    #[test]
    fn upper_kernel_far_field_decay() {
        let c = constants().with_upper(upper());
        let p = RestitutionParams::new(0.8).unwrap();
        let w = Velocity::new(0.2, 0.1, 0.0);
        let dir = Velocity::new(0.6, 0.0, 0.8);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let r = 3.0 + 0.25 * k as f64;
            let val = gain_kernel_upper(dir * r, w, p, &c).unwrap();
            assert!(val < prev);
            prev = val;
        }
    }

    #[test]
    fn upper_kernel_tail_bound() {
        let up = upper();
        let c = constants().with_upper(up);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for alpha in [0.6, 0.9, 1.0] {
            let p = RestitutionParams::new(alpha).unwrap();
            let cbar = up.cbar(p);
            for _ in 0..500 {
                let r = 1.0 + 5.0 * rng.random::<f64>();
                let mut w = random_velocity(&mut rng, 2.0);
                if w.norm() > r / 2.0 {
                    w = w * (0.49 * r / w.norm());
                }
                let mut v = random_velocity(&mut rng, 1.0);
                v = v * ((r + 4.0 * rng.random::<f64>()) / v.norm());
                let k = gain_kernel_upper(v, w, p, &c).unwrap();
                let bound = 2.0 * cbar / r
                    * (-1.5 * up.beta1() * (1.0 + p.mu_alpha()) * v.norm_sq()).exp();
                assert!(k <= bound * (1.0 + 1e-12), "k={k} bound={bound}");
            }
        }
    }

    #[test]
    fn k1_elastic_maxwellian_matches_scattering_kernel() {
        let c = constants();
        let m = BathMaxwellian::standard();
        let quad = PlaneQuadrature::new(PlaneQuadrature::DEFAULT_NODES, m.u0, m.theta0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = random_velocity(&mut rng, 5.0);
            let w = random_velocity(&mut rng, 5.0);
            let a = gain_kernel_k1(v, w, RestitutionParams::elastic(), &m, &quad).unwrap();
            let b = scattering_kernel_k(v, w, &c).unwrap();
            assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn k1_dominated_by_upper_kernel() {
        let up = upper();
        let c = constants().with_upper(up);
        // F <= Mbar pointwise: a cooler, lighter Maxwellian
        let f = |v: Velocity| 0.6 * (2.0 * PI * 0.8f64).powf(-1.5) * (-v.norm_sq() / 1.6).exp();
        assert!((0..100).all(|k| {
            let v = Velocity::new(0.1 * k as f64, 0.0, 0.0);
            f(v) <= up.density(v)
        }));
        let quad = PlaneQuadrature::new(24, Velocity::ZERO, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for alpha in [0.7, 0.95] {
            let p = RestitutionParams::new(alpha).unwrap();
            for _ in 0..50 {
                let v = random_velocity(&mut rng, 4.0);
                let w = random_velocity(&mut rng, 4.0);
                let k1 = gain_kernel_k1(v, w, p, &f, &quad).unwrap();
                let kb = gain_kernel_upper(v, w, p, &c).unwrap();
                assert!(k1 <= kb * (1.0 + 1e-9), "{k1} > {kb}");
            }
        }
    }

    #[test]
    fn k1_of_zero_density_vanishes() {
        let quad = PlaneQuadrature::new(8, Velocity::ZERO, 1.0);
        let zero = |_: Velocity| 0.0;
        let k = gain_kernel_k1(
            Velocity::new(1.0, 0.0, 0.0),
            Velocity::ZERO,
            RestitutionParams::new(0.5).unwrap(),
            &zero,
            &quad,
        )
        .unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn k1_mass_identity_fixes_constant() {
        // int K^1(v, w) dv = sigma_F(w) with F = M, checked by quadrature over
        // v = w - rho n.
        let m = BathMaxwellian::standard();
        let quad = PlaneQuadrature::new(16, m.u0, m.theta0);
        let sphere = SphereRule::new(10);
        let radial = gauss_legendre(40).mapped(0.0, 14.0);
        for alpha in [0.6, 1.0] {
            let p = RestitutionParams::new(alpha).unwrap();
            let w = Velocity::new(0.7, 0.0, 0.2);
            let mass: f64 = 4.0
                * PI
                * sphere.average(|n| {
                    radial.integrate(|rho| {
                        let v = w - n * rho;
                        rho * rho * gain_kernel_k1(v, w, p, &m, &quad).unwrap()
                    })
                });
            let sigma = sigma_bath_closed_form(&m, w);
            assert!((mass - sigma).abs() < 1e-6 * sigma, "alpha={alpha}: {mass} vs {sigma}");
        }
    }
}
