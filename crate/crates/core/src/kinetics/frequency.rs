use std::f64::consts::PI;

use super::{BathMaxwellian, Velocity};
use crate::diagnostics::DensityEstimate;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Mean of `|v - w|` over independent uniform directions with `|v| = r`, `|w| = s`.
pub fn shell_mean_speed(r: f64, s: f64) -> f64 {
    let (big, small) = if r >= s { (r, s) } else { (s, r) };
    if big == 0.0 {
        return 0.0;
    }
    big + small * small / (3.0 * big)
}

/// Closed form of `Sigma(v) = int M(w) |v - w| dw` for the bath Maxwellian.
pub fn sigma_bath_closed_form(m: &BathMaxwellian, v: Velocity) -> f64 {
    let st = m.theta0.sqrt();
    let x = (v - m.u0).norm() / st;
    if x < 1e-6 {
        // series: sqrt(8/pi) (1 + x^2/6 + ...)
        return st * (8.0 / PI).sqrt() * (1.0 + x * x / 6.0);
    }
    st * ((x + 1.0 / x) * libm::erf(x / 2f64.sqrt())
        + (2.0 / PI).sqrt() * (-x * x / 2.0).exp())
}

fn sigma_bath_quadrature(m: &BathMaxwellian, r: f64, order: usize) -> f64 {
    let reach = 14.0 * m.theta0.sqrt();
    let gl = gauss_legendre(order);
    let f = |s: f64| 4.0 * PI * s * s * m.radial_density(s) * shell_mean_speed(r, s);
    // pieces: the Gaussian bulk, the kink at s = r, and the tail beyond it
    let mut cuts = vec![0.0, r.min(reach), r, r + reach];
    cuts.dedup();
    cuts.windows(2).map(|w| gl.mapped(w[0], w[1]).integrate(f)).sum()
}

/// Collision frequency against the bath, `Sigma(v) = int M(w)|v-w| dw`, by
/// fixed radial quadrature split at the kink `|w - u0| = |v - u0|`.
pub fn collision_frequency_bath(m: &BathMaxwellian, v: Velocity) -> Result<f64> {
    let r = (v - m.u0).norm();
    let coarse = sigma_bath_quadrature(m, r, 48);
    let fine = sigma_bath_quadrature(m, r, 96);
    let residual = (fine - coarse).abs() / fine.abs().max(f64::MIN_POSITIVE);
    if residual > 1e-12 {
        return Err(Error::Quadrature { residual });
    }
    Ok(fine)
}

/// Collision frequency against a binned state, `sigma_F(v) = int F(w)|v-w| dw`.
pub fn collision_frequency_state(f: &DensityEstimate, v: Velocity) -> Result<f64> {
    if !(f.total_mass() > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(f.convolve_speed(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_at_bulk_velocity_is_mean_speed() {
        let m = BathMaxwellian::standard();
        let s = collision_frequency_bath(&m, Velocity::ZERO).unwrap();
        assert!((s - (8.0 / PI).sqrt()).abs() < 1e-12);
        assert!((s - 1.59577).abs() < 1e-5);
        let m2 = BathMaxwellian::new(Velocity::new(0.5, 0.0, -1.0), 2.0).unwrap();
        let s2 = collision_frequency_bath(&m2, m2.u0).unwrap();
        assert!((s2 - (16.0 / PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let m = BathMaxwellian::new(Velocity::ZERO, 1.3).unwrap();
        for r in [0.0, 0.1, 0.7, 1.0, 2.5, 6.0, 20.0] {
            let v = Velocity::new(0.0, r, 0.0);
            let q = collision_frequency_bath(&m, v).unwrap();
            let c = sigma_bath_closed_form(&m, v);
            assert!((q - c).abs() < 1e-11 * c, "r={r}: {q} vs {c}");
        }
    }

    #[test]
    fn far_field_and_lower_bound() {
        let m = BathMaxwellian::standard();
        let mean_speed = (8.0 / PI).sqrt();
        for r in [0.5, 2.0, 10.0, 100.0] {
            let s = collision_frequency_bath(&m, Velocity::new(r, 0.0, 0.0)).unwrap();
            assert!(s >= r - mean_speed);
        }
        let s = collision_frequency_bath(&m, Velocity::new(1e3, 0.0, 0.0)).unwrap();
        assert!((s / 1e3 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn translation_symmetry() {
        let shifted = BathMaxwellian::new(Velocity::new(1.0, 2.0, 3.0), 1.0).unwrap();
        let a = collision_frequency_bath(&shifted, shifted.u0 + Velocity::new(0.3, 0.0, 0.0)).unwrap();
        let b = collision_frequency_bath(&BathMaxwellian::standard(), Velocity::new(0.0, 0.3, 0.0)).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn shell_mean_speed_limits() {
        assert_eq!(shell_mean_speed(0.0, 2.0), 2.0);
        assert!((shell_mean_speed(1.0, 1.0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(shell_mean_speed(3.0, 1.0), shell_mean_speed(1.0, 3.0));
    }
}
