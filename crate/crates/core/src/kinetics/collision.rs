use super::Velocity;
use crate::error::{invalid, Result};
use crate::quadrature::SphereRule;

/// Tolerance on `|sigma| = 1` accepted by the collision transforms.
pub const UNIT_TOL: f64 = 1e-12;

fn check_unit(sigma: Velocity) -> Result<()> {
    let n = sigma.norm();
    if !((n - 1.0).abs() <= UNIT_TOL) {
        return Err(invalid(format!("scattering direction has norm {n}, expected 1")));
    }
    Ok(())
}

#[inline]
fn increment(v: Velocity, w: Velocity, sigma: Velocity, factor: f64) -> Velocity {
    let q = v - w;
    (sigma * q.norm() - q) * factor
}

/// Post-collisional velocities of an inelastic hard-sphere pair.
///
/// `v' = v + (1+a)/4 (|q| sigma - q)`, `w' = w - (1+a)/4 (|q| sigma - q)`, `q = v - w`.
pub fn inelastic_transform(
    v: Velocity,
    w: Velocity,
    sigma: Velocity,
    alpha: f64,
) -> Result<(Velocity, Velocity)> {
    check_unit(sigma)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("restitution coefficient {alpha} outside (0, 1]")));
    }
    Ok(inelastic_unchecked(v, w, sigma, alpha))
}

#[inline]
pub(crate) fn inelastic_unchecked(
    v: Velocity,
    w: Velocity,
    sigma: Velocity,
    alpha: f64,
) -> (Velocity, Velocity) {
    let d = increment(v, w, sigma, 0.25 * (1.0 + alpha));
    (v + d, w - d)
}

/// Elastic collision with a bath particle (`alpha = 1`).
pub fn elastic_bath_transform(
    v: Velocity,
    w: Velocity,
    sigma: Velocity,
) -> Result<(Velocity, Velocity)> {
    check_unit(sigma)?;
    Ok(inelastic_unchecked(v, w, sigma, 1.0))
}

/// Change of the pair kinetic energy `|v'|^2 + |w'|^2 - |v|^2 - |w|^2`.
pub fn energy_loss(v: Velocity, w: Velocity, sigma: Velocity, alpha: f64) -> Result<f64> {
    check_unit(sigma)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("restitution coefficient {alpha} outside (0, 1]")));
    }
    let q = v - w;
    let qn = q.norm();
    Ok(-0.25 * (1.0 - alpha * alpha) * qn * (qn - q.dot(sigma)))
}

/// Sphere average `(1/4pi) int (psi(v') + psi(w') - psi(v) - psi(w)) dsigma`.
pub fn angular_average(
    psi: impl Fn(Velocity) -> f64,
    v: Velocity,
    w: Velocity,
    alpha: f64,
    rule: &SphereRule,
) -> f64 {
    let base = psi(v) + psi(w);
    rule.average(|s| {
        let (vp, wp) = inelastic_unchecked(v, w, s, alpha);
        psi(vp) + psi(wp) - base
    })
}
