//! Deterministic random streams. Every stream is a pure function of
//! `(seed, tag, index)` so results never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::kinetics::{BathMaxwellian, Velocity};

/// Stream tags used across the crate.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SELF_PLAN: u64 = 2;
    pub const SELF_APPLY: u64 = 3;
    pub const BATH: u64 = 4;
    pub const DIAG_D: u64 = 10;
    pub const DIAG_DH: u64 = 11;
    pub const DIAG_PAIR: u64 = 12;
    pub const DIAG_IDENTITY: u64 = 13;
    pub const SUBSEED: u64 = 20;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` of the generator keyed by `(seed, tag, step)`.
pub fn stream(seed: u64, tag: u64, step: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(tag)) ^ step);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derived seed for a sub-experiment.
pub fn subseed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag::SUBSEED)) ^ index)
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Velocity {
    Velocity::from_array(UnitSphere.sample(rng))
}

pub fn gaussian_velocity<R: Rng + ?Sized>(rng: &mut R, mean: Velocity, theta: f64) -> Velocity {
    let s = theta.sqrt();
    let mut c = || -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        s * z
    };
    let d = Velocity::new(c(), c(), c());
    mean + d
}

/// A draw from the bath Maxwellian.
pub fn sample_bath_partner<R: Rng + ?Sized>(m: &BathMaxwellian, rng: &mut R) -> Velocity {
    gaussian_velocity(rng, m.u0, m.theta0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_gof, mean_se};
    use std::f64::consts::PI;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, tag::BATH, 3, 0).random();
        let b: u64 = stream(7, tag::BATH, 3, 0).random();
        let c: u64 = stream(7, tag::BATH, 3, 1).random();
        let d: u64 = stream(7, tag::BATH, 4, 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn bath_partner_moments_and_speed_law() {
        let m = BathMaxwellian::new(Velocity::new(0.5, -1.0, 0.0), 2.0).unwrap();
        let mut rng = stream(1, 0, 0, 0);
        let n = 100_000;
        let draws: Vec<Velocity> = (0..n).map(|_| sample_bath_partner(&m, &mut rng)).collect();
        let xs: Vec<f64> = draws.iter().map(|w| w.x).collect();
        let (mx, se) = mean_se(&xs);
        assert!((mx - 0.5).abs() < 4.0 * se);
        let var: Vec<f64> = draws.iter().map(|w| (w.y + 1.0).powi(2)).collect();
        let (vy, se) = mean_se(&var);
        assert!((vy - 2.0).abs() < 4.0 * se);
        let speeds: Vec<f64> = draws.iter().map(|w| (*w - m.u0).norm()).collect();
        let (ms, se) = mean_se(&speeds);
        assert!((ms - (16.0 / PI).sqrt()).abs() < 4.0 * se);
        // chi-square on equal-probability speed bins
        let bins = 20;
        let mut edges = vec![0.0];
        for k in 1..bins {
            let target = k as f64 / bins as f64;
            let (mut lo, mut hi) = (0.0, 20.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if m.speed_cdf(mid) < target { lo = mid } else { hi = mid }
            }
            edges.push(0.5 * (lo + hi));
        }
        edges.push(f64::INFINITY);
        let mut counts = vec![0u64; bins];
        for s in speeds {
            counts[edges.partition_point(|&e| e <= s) - 1] += 1;
        }
        let (_, _, p) = chi_square_gof(&counts, &vec![1.0 / bins as f64; bins]).unwrap();
        assert!(p > 0.01, "p = {p}");
    }
}
