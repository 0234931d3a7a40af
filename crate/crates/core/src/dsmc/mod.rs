//! Stochastic particle integrator: inelastic self-collisions plus elastic
//! collisions with the thermal bath, sampled exactly by majorant rejection.

mod checkpoint;
mod run;
mod step;

pub use checkpoint::{config_hash, Checkpoint};
pub use run::{run, Hook, RunOptions, RunSummary};
pub use step::{step, DsmcConfig, MajorantConfig, StepReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinetics::Velocity;
use crate::rng::{gaussian_velocity, stream, tag, unit_vector};

/// One component `weight * M(u, theta)` of a Maxwellian mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub u: Velocity,
    pub theta: f64,
}

/// Initial datum `f0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDistribution {
    Maxwellian { u: Velocity, theta: f64 },
    Mixture { components: Vec<MixtureComponent> },
    /// Uniform on the sphere `|v - center| = radius`.
    Shell { center: Velocity, radius: f64 },
    /// Uniform in the ball `|v - center| <= radius`.
    Ball { center: Velocity, radius: f64 },
}

impl InitialDistribution {
    pub fn maxwellian(theta: f64) -> Self {
        Self::Maxwellian { u: Velocity::ZERO, theta }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |u: &Velocity| u.is_finite();
        match self {
            Self::Maxwellian { u, theta } => {
                if !(finite(u) && *theta > 0.0 && theta.is_finite()) {
                    return Err(invalid("maxwellian needs finite u and theta > 0"));
                }
            }
            Self::Mixture { components } => {
                if components.is_empty() {
                    return Err(invalid("mixture has no components"));
                }
                for c in components {
                    if !(c.weight > 0.0 && c.weight.is_finite() && c.theta > 0.0 && finite(&c.u)) {
                        return Err(invalid("mixture components need weight > 0, theta > 0"));
                    }
                }
            }
            Self::Shell { center, radius } | Self::Ball { center, radius } => {
                if !(finite(center) && *radius >= 0.0 && radius.is_finite()) {
                    return Err(invalid("shell/ball needs finite center and radius >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Analytic `int f |v|^2 dv`.
    pub fn energy(&self) -> f64 {
        match self {
            Self::Maxwellian { u, theta } => u.norm_sq() + 3.0 * theta,
            Self::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                components.iter().map(|c| c.weight * (c.u.norm_sq() + 3.0 * c.theta)).sum::<f64>()
                    / total
            }
            Self::Shell { center, radius } => center.norm_sq() + radius * radius,
            Self::Ball { center, radius } => center.norm_sq() + 0.6 * radius * radius,
        }
    }

    /// Analytic `int f v dv`.
    pub fn momentum(&self) -> Velocity {
        match self {
            Self::Maxwellian { u, .. } => *u,
            Self::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                components.iter().fold(Velocity::ZERO, |acc, c| acc + c.u * (c.weight / total))
            }
            Self::Shell { center, .. } | Self::Ball { center, .. } => *center,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Velocity {
        match self {
            Self::Maxwellian { u, theta } => gaussian_velocity(rng, *u, *theta),
            Self::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut x = rng.random::<f64>() * total;
                let mut pick = components[components.len() - 1];
                for c in components {
                    if x < c.weight {
                        pick = *c;
                        break;
                    }
                    x -= c.weight;
                }
                gaussian_velocity(rng, pick.u, pick.theta)
            }
            Self::Shell { center, radius } => *center + unit_vector(rng) * *radius,
            Self::Ball { center, radius } => {
                let r = radius * rng.random::<f64>().cbrt();
                *center + unit_vector(rng) * r
            }
        }
    }
}

/// `N` equally weighted particle velocities with a clock.
///
/// Random streams are keyed by `(seed, step)`, so the seed and step counter
/// are the complete generator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub(crate) velocities: Vec<Velocity>,
    pub(crate) time: f64,
    pub(crate) seed: u64,
    pub(crate) step: u64,
}

impl Ensemble {
    pub fn from_velocities(velocities: Vec<Velocity>, seed: u64) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(invalid("an ensemble needs at least two particles"));
        }
        if let Some(i) = velocities.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("particle {i} has a non-finite velocity")));
        }
        Ok(Self { velocities, time: 0.0, seed, step: 0 })
    }

    pub fn velocities(&self) -> &[Velocity] {
        &self.velocities
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Mean `|v|^2` per particle.
    pub fn energy(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm_sq()).sum::<f64>() / self.len() as f64
    }

    pub fn momentum(&self) -> Velocity {
        let s = self.velocities.iter().fold(Velocity::ZERO, |a, &v| a + v);
        s * (1.0 / self.len() as f64)
    }
}

pub fn init_ensemble(spec: &InitialDistribution, n: usize, seed: u64) -> Result<Ensemble> {
    spec.validate()?;
    if n < 2 {
        return Err(invalid("an ensemble needs at least two particles"));
    }
    let mut rng = stream(seed, tag::INIT, 0, 0);
    let velocities = (0..n).map(|_| spec.sample(&mut rng)).collect();
    Ensemble::from_velocities(velocities, seed)
}

/// Sample moments of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub momentum: Velocity,
    pub energy: f64,
    /// `(p, int f |v|^p dv)` for each requested order.
    pub absolute: Vec<(f64, f64)>,
}

pub fn moments(ens: &Ensemble, orders: &[f64]) -> Moments {
    let n = ens.len() as f64;
    let absolute = orders
        .iter()
        .map(|&p| (p, ens.velocities.iter().map(|v| v.norm().powf(p)).sum::<f64>() / n))
        .collect();
    Moments { mass: 1.0, momentum: ens.momentum(), energy: ens.energy(), absolute }
}

/// Sample estimate of `int f exp(r |v|^s) dv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub value: f64,
    pub log_value: f64,
    /// Share of the sum carried by the ten largest terms.
    pub top10_share: f64,
    pub unreliable: bool,
}

pub fn exp_moment(ens: &Ensemble, r: f64, s: f64) -> Result<ExpMoment> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(format!("exponential moment rate {r} must be >= 0")));
    }
    if !(s > 0.0 && s <= 2.0) {
        return Err(invalid(format!("exponential moment order {s} outside (0, 2]")));
    }
    if r == 0.0 {
        return Ok(ExpMoment { value: 1.0, log_value: 0.0, top10_share: 10.0 / ens.len() as f64, unreliable: false });
    }
    let mut x: Vec<f64> = ens.velocities.iter().map(|v| r * v.norm().powf(s)).collect();
    x.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = x[0];
    let lse = |xs: &[f64]| top + xs.iter().map(|&e| (e - top).exp()).sum::<f64>().ln();
    let all = lse(&x);
    let head = lse(&x[..x.len().min(10)]);
    let log_value = all - (x.len() as f64).ln();
    let top10_share = (head - all).exp();
    Ok(ExpMoment { value: log_value.exp(), log_value, top10_share, unreliable: top10_share > 0.5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use crate::stats::mean_se;
    use std::f64::consts::PI;

    #[test]
    fn maxwellian_energy_in_clt_band() {
        let spec = InitialDistribution::maxwellian(1.0);
        let ens = init_ensemble(&spec, 100_000, 1).unwrap();
        let e: Vec<f64> = ens.velocities().iter().map(|v| v.norm_sq()).collect();
        let (m, se) = mean_se(&e);
        assert!((m - 3.0).abs() < 3.0 * se, "{m} +- {se}");
        assert_eq!(moments(&ens, &[]).mass, 1.0);
    }

    #[test]
    fn shell_speeds_are_exact() {
        let spec = InitialDistribution::Shell { center: Velocity::ZERO, radius: 1.0 };
        let ens = init_ensemble(&spec, 1000, 2).unwrap();
        assert!(ens.velocities().iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn mixture_energy() {
        let c = |theta| MixtureComponent { weight: 0.5, u: Velocity::ZERO, theta };
        let spec = InitialDistribution::Mixture { components: vec![c(1.0), c(4.0)] };
        assert!((spec.energy() - 7.5).abs() < 1e-15);
        let ens = init_ensemble(&spec, 100_000, 3).unwrap();
        let e: Vec<f64> = ens.velocities().iter().map(|v| v.norm_sq()).collect();
        let (m, se) = mean_se(&e);
        assert!((m - 7.5).abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn ball_energy() {
        let spec = InitialDistribution::Ball { center: Velocity::new(1.0, 0.0, 0.0), radius: 2.0 };
        let ens = init_ensemble(&spec, 100_000, 4).unwrap();
        assert!(ens.velocities().iter().all(|v| (*v - Velocity::new(1.0, 0.0, 0.0)).norm() <= 2.0));
        let e: Vec<f64> = ens.velocities().iter().map(|v| v.norm_sq()).collect();
        let (m, se) = mean_se(&e);
        assert!((m - spec.energy()).abs() < 3.0 * se);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(init_ensemble(&InitialDistribution::maxwellian(-1.0), 10, 0).is_err());
        assert!(init_ensemble(&InitialDistribution::Mixture { components: vec![] }, 10, 0).is_err());
        assert!(init_ensemble(&InitialDistribution::maxwellian(1.0), 1, 0).is_err());
    }

    #[test]
    fn exp_moment_matches_radial_quadrature() {
        let ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 100_000, 5).unwrap();
        let em = exp_moment(&ens, 0.1, 1.0).unwrap();
        // 4 pi int r^2 (2 pi)^{-3/2} exp(-r^2/2) exp(0.1 r) dr
        let rule = gauss_legendre(80).mapped(0.0, 14.0);
        let oracle = rule.integrate(|r| {
            4.0 * PI * r * r * (2.0 * PI).powf(-1.5) * (-0.5 * r * r + 0.1 * r).exp()
        });
        let terms: Vec<f64> = ens.velocities().iter().map(|v| (0.1 * v.norm()).exp()).collect();
        let (_, se) = mean_se(&terms);
        assert!((em.value - oracle).abs() < 3.0 * se, "{} vs {oracle}", em.value);
        assert!(!em.unreliable);
        assert_eq!(exp_moment(&ens, 0.0, 1.0).unwrap().value, 1.0);
    }

    #[test]
    fn exp_moment_survives_overflow() {
        let mut v = vec![Velocity::ZERO; 100];
        v[0] = Velocity::new(1e3, 0.0, 0.0);
        let ens = Ensemble::from_velocities(v, 0).unwrap();
        let em = exp_moment(&ens, 1.0, 1.0).unwrap();
        assert!((em.log_value - (1e3 - 100f64.ln())).abs() < 1e-9);
        assert!(em.unreliable);
    }
}
