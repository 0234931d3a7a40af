//! Collision mechanics, the bath Maxwellian, collision frequencies and the
//! explicit scattering/gain kernels.

mod collision;
mod frequency;
mod kernels;

pub(crate) use collision::inelastic_unchecked;
pub use collision::{
    angular_average, elastic_bath_transform, energy_loss, inelastic_transform, UNIT_TOL,
};
pub use frequency::{
    collision_frequency_bath, collision_frequency_state, shell_mean_speed, sigma_bath_closed_form,
};
pub use kernels::{
    calibrate_c0, gain_kernel_k1, gain_kernel_k1_constant, gain_kernel_upper, scattering_kernel_k,
    Calibration, KernelConstants, PlaneQuadrature, UpperMaxwellian,
};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{invalid, Result};

/// A point in three-dimensional velocity space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Velocity) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Two unit vectors completing `self` (assumed unit) to an orthonormal basis.
    pub fn orthonormal_complement(self) -> (Velocity, Velocity) {
        let helper = if self.x.abs() < 0.9 {
            Velocity::new(1.0, 0.0, 0.0)
        } else {
            Velocity::new(0.0, 1.0, 0.0)
        };
        let e1 = helper - self * helper.dot(self);
        let e1 = e1 * (1.0 / e1.norm());
        let e2 = Velocity::new(
            self.y * e1.z - self.z * e1.y,
            self.z * e1.x - self.x * e1.z,
            self.x * e1.y - self.y * e1.x,
        );
        (e1, e2)
    }
}

impl Add for Velocity {
    type Output = Velocity;
    fn add(self, o: Velocity) -> Velocity {
        Velocity::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Velocity {
    type Output = Velocity;
    fn sub(self, o: Velocity) -> Velocity {
        Velocity::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Velocity {
    type Output = Velocity;
    fn neg(self) -> Velocity {
        Velocity::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Velocity {
    type Output = Velocity;
    fn mul(self, s: f64) -> Velocity {
        Velocity::new(self.x * s, self.y * s, self.z * s)
    }
}

impl AddAssign for Velocity {
    fn add_assign(&mut self, o: Velocity) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Velocity {
    fn sub_assign(&mut self, o: Velocity) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Restitution coefficient and the derived shift `mu_alpha = 2(1-alpha)/(1+alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestitutionParams {
    alpha: f64,
}

impl RestitutionParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("restitution coefficient {alpha} outside (0, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn elastic() -> Self {
        Self { alpha: 1.0 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu_alpha(&self) -> f64 {
        2.0 * (1.0 - self.alpha) / (1.0 + self.alpha)
    }

    pub fn is_elastic(&self) -> bool {
        self.alpha == 1.0
    }
}

/// Bath Maxwellian with unit mass, bulk velocity `u0` and temperature `theta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathMaxwellian {
    pub u0: Velocity,
    pub theta0: f64,
}

impl BathMaxwellian {
    pub fn new(u0: Velocity, theta0: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite()) || !u0.is_finite() {
            return Err(invalid(format!("bath temperature {theta0} must be positive")));
        }
        Ok(Self { u0, theta0 })
    }

    pub fn standard() -> Self {
        Self { u0: Velocity::ZERO, theta0: 1.0 }
    }

    /// Density at `v`.
    pub fn density(&self, v: Velocity) -> f64 {
        maxwellian_density(self, v)
    }

    /// Density as a function of the speed relative to `u0`.
    pub fn radial_density(&self, r: f64) -> f64 {
        (2.0 * PI * self.theta0).powf(-1.5) * (-r * r / (2.0 * self.theta0)).exp()
    }

    /// Probability that `|v - u0| <= r`.
    pub fn speed_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r.is_infinite() {
            return 1.0;
        }
        let x = r / self.theta0.sqrt();
        libm::erf(x / 2f64.sqrt())
            - (2.0 / PI).sqrt() * x * (-x * x / 2.0).exp()
    }

    /// Mass of the shell `a <= |v - u0| < b`.
    pub fn shell_mass(&self, a: f64, b: f64) -> f64 {
        // upper tail form keeps precision far out
        let ta = self.speed_sf(a);
        let tb = self.speed_sf(b);
        (ta - tb).max(0.0)
    }

    /// Probability that `|v - u0| > r`.
    pub fn speed_sf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        if r.is_infinite() {
            return 0.0;
        }
        let x = r / self.theta0.sqrt();
        libm::erfc(x / 2f64.sqrt())
            + (2.0 / PI).sqrt() * x * (-x * x / 2.0).exp()
    }
}

/// `(2 pi theta0)^{-3/2} exp(-|v-u0|^2 / (2 theta0))`.
pub fn maxwellian_density(m: &BathMaxwellian, v: Velocity) -> f64 {
    m.radial_density((v - m.u0).norm())
}

/// Exponential weight `m(v) = exp(-a|v|)` defining the weighted L1 norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    a: f64,
}

impl WeightSpec {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid(format!("weight exponent {a} must be positive")));
        }
        Ok(Self { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `m^{-1}(v) = exp(a |v|)` as a function of the speed.
    pub fn inv_weight(&self, speed: f64) -> f64 {
        (self.a * speed).exp()
    }

    /// `<v> = (1 + |v|^2)^{1/2}`.
    pub fn bracket(speed: f64) -> f64 {
        (1.0 + speed * speed).sqrt()
    }

    /// X-norm of a discrete measure given as (speed, signed mass) pairs.
    pub fn x_norm<I: IntoIterator<Item = (f64, f64)>>(&self, items: I) -> f64 {
        items
            .into_iter()
            .map(|(r, m)| m.abs() * self.inv_weight(r))
            .sum()
    }

    /// Y-norm of a discrete measure given as (speed, signed mass) pairs.
    pub fn y_norm<I: IntoIterator<Item = (f64, f64)>>(&self, items: I) -> f64 {
        items
            .into_iter()
            .map(|(r, m)| m.abs() * Self::bracket(r) * self.inv_weight(r))
            .sum()
    }
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { a: 0.5 }
    }
}

/// Pointwise evaluation of a velocity density.
pub trait DensityFn: Sync {
    fn eval(&self, v: Velocity) -> f64;
}

impl DensityFn for BathMaxwellian {
    fn eval(&self, v: Velocity) -> f64 {
        self.density(v)
    }
}

impl<F: Fn(Velocity) -> f64 + Sync> DensityFn for F {
    fn eval(&self, v: Velocity) -> f64 {
        self(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    #[test]
    fn restitution_validation() {
        assert!(RestitutionParams::new(0.0).is_err());
        assert!(RestitutionParams::new(1.2).is_err());
        assert!(RestitutionParams::new(f64::NAN).is_err());
        let p = RestitutionParams::new(1.0).unwrap();
        assert_eq!(p.mu_alpha(), 0.0);
        let p = RestitutionParams::new(0.5).unwrap();
        assert!((p.mu_alpha() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn maxwellian_values() {
        let m = BathMaxwellian::standard();
        let peak = (2.0 * PI).powf(-1.5);
        assert_eq!(m.density(Velocity::ZERO), peak);
        let v = m.density(Velocity::new(1.0, 0.0, 0.0));
        assert!((v - peak * (-0.5f64).exp()).abs() < 1e-16);
        assert!((v - 0.0385).abs() < 1e-4);
        let shifted = BathMaxwellian::new(Velocity::new(1.0, -2.0, 0.5), 2.5).unwrap();
        assert_eq!(shifted.density(shifted.u0), (2.0 * PI * 2.5).powf(-1.5));
    }

    #[test]
    fn maxwellian_unit_mass_by_quadrature() {
        let m = BathMaxwellian::new(Velocity::ZERO, 1.7).unwrap();
        let r = gauss_legendre(80).mapped(0.0, 12.0 * 1.7f64.sqrt());
        let mass = r.integrate(|s| 4.0 * PI * s * s * m.radial_density(s));
        assert!((mass - 1.0).abs() < 1e-12);
        assert!((m.speed_cdf(f64::INFINITY) - 1.0).abs() < 1e-15);
        assert!((m.speed_cdf(2.0) + m.speed_sf(2.0) - 1.0).abs() < 1e-15);
        let s = m.shell_mass(0.5, 1.5);
        let q = gauss_legendre(40).mapped(0.5, 1.5);
        let exact = q.integrate(|s| 4.0 * PI * s * s * m.radial_density(s));
        assert!((s - exact).abs() < 1e-13);
    }

    #[test]
    fn weights_order_norms() {
        let w = WeightSpec::new(0.3).unwrap();
        let items = vec![(0.0, 0.2), (1.0, -0.3), (4.0, 0.5)];
        assert!(w.x_norm(items.clone()) <= w.y_norm(items));
        assert!(WeightSpec::new(0.0).is_err());
    }

    #[test]
    fn orthonormal_complement_is_orthonormal() {
        for v in [Velocity::new(0.0, 0.0, 1.0), Velocity::new(1.0, 0.0, 0.0), Velocity::new(0.6, 0.0, 0.8)] {
            let (a, b) = v.orthonormal_complement();
            assert!(a.dot(v).abs() < 1e-15 && b.dot(v).abs() < 1e-15 && a.dot(b).abs() < 1e-15);
            assert!((a.norm() - 1.0).abs() < 1e-15 && (b.norm() - 1.0).abs() < 1e-15);
        }
    }
}
