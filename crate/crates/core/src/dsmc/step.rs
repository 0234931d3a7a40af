use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::Ensemble;
use crate::error::{invalid, Error, Result};
use crate::kinetics::inelastic_unchecked;
use crate::kinetics::{BathMaxwellian, RestitutionParams, Velocity};
use crate::rng::{sample_bath_partner, stream, tag, unit_vector};

const BATH_CHUNK: usize = 1024;
const MAX_ATTEMPTS: u64 = 32;

/// Physical and numerical settings of the particle integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsmcConfig {
    pub params: RestitutionParams,
    pub bath: BathMaxwellian,
    pub self_channel: bool,
    pub bath_channel: bool,
    /// Inflation of the refreshed majorants.
    pub safety: f64,
    /// Maximum expected candidate events per particle per step.
    pub event_ceiling: f64,
}

impl DsmcConfig {
    pub fn new(params: RestitutionParams, bath: BathMaxwellian) -> Self {
        Self { params, bath, self_channel: true, bath_channel: true, safety: 2.0, event_ceiling: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.safety >= 1.0 && self.safety.is_finite()) {
            return Err(invalid("majorant safety factor must be >= 1"));
        }
        if !(self.event_ceiling > 0.0 && self.event_ceiling.is_finite()) {
            return Err(invalid("event ceiling must be positive"));
        }
        Ok(())
    }
}

/// Rate bounds used for rejection sampling.
///
/// `lambda_self` bounds `|v_i - v_j|` over all pairs; `lambda_bath` bounds
/// `|v_i - w|` over particles and partner draws (and hence `Sigma(v_i)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantConfig {
    pub lambda_self: f64,
    pub lambda_bath: f64,
}

impl MajorantConfig {
    /// Certified bounds from the current ensemble, inflated by `safety`.
    pub fn refresh(ens: &Ensemble, bath: &BathMaxwellian, safety: f64) -> Self {
        let c = ens.momentum();
        let spread = ens.velocities.iter().map(|&v| (v - c).norm()).fold(0.0, f64::max);
        let far = ens.velocities.iter().map(|&v| (v - bath.u0).norm()).fold(0.0, f64::max);
        Self {
            lambda_self: safety * 2.0 * spread,
            lambda_bath: safety * (far + 4.0 * bath.theta0.sqrt()),
        }
    }

    pub fn events_per_particle(&self, dt: f64, cfg: &DsmcConfig) -> f64 {
        let s = if cfg.self_channel { self.lambda_self } else { 0.0 };
        let b = if cfg.bath_channel { self.lambda_bath } else { 0.0 };
        dt * (s + b)
    }
}

/// Counters of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Time after the step.
    pub time: f64,
    pub dt: f64,
    pub self_proposed: u64,
    pub self_accepted: u64,
    pub bath_proposed: u64,
    pub bath_accepted: u64,
    /// Accepted self-collisions per particle per unit time (each collision counts twice).
    pub self_rate: f64,
    pub bath_rate: f64,
    /// Kinetic energy per particle lost in self-collisions.
    pub energy_dissipated: f64,
    /// Kinetic energy per particle gained from the bath.
    pub bath_energy_gain: f64,
    pub batches: usize,
    pub retries: u32,
    pub majorant: MajorantConfig,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall_time: f64,
}

struct Attempt {
    self_proposed: u64,
    self_accepted: u64,
    bath_proposed: u64,
    bath_accepted: u64,
    de_self: f64,
    de_bath: f64,
    batches: usize,
}

enum Outcome {
    Rejected,
    Accepted { i: usize, j: usize, vi: Velocity, vj: Velocity, de: f64 },
    Violation(f64),
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Candidate pairs grouped so no particle appears twice in a batch while each
/// particle keeps the order of its candidates. Depends only on `(seed, key, N)`.
fn plan_pairs(seed: u64, key: u64, n: usize, mean: f64) -> (Vec<Vec<(u32, u32, u64)>>, u64) {
    let mut rng = stream(seed, tag::SELF_PLAN, key, 0);
    let count = poisson(&mut rng, mean);
    let mut next = vec![0u32; n];
    let mut batches: Vec<Vec<(u32, u32, u64)>> = Vec::new();
    for k in 0..count {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let b = next[i].max(next[j]) as usize;
        if b == batches.len() {
            batches.push(Vec::new());
        }
        batches[b].push((i as u32, j as u32, k));
        next[i] = b as u32 + 1;
        next[j] = b as u32 + 1;
    }
    (batches, count)
}

fn self_channel(
    v: &mut [Velocity],
    seed: u64,
    key: u64,
    dt: f64,
    lambda: f64,
    alpha: f64,
) -> std::result::Result<(u64, u64, f64, usize), f64> {
    let n = v.len();
    let (batches, proposed) = plan_pairs(seed, key, n, 0.5 * n as f64 * lambda * dt);
    let mut accepted = 0;
    let mut de = 0.0;
    for batch in &batches {
        let vs: &[Velocity] = v;
        let outcomes: Vec<Outcome> = batch
            .par_iter()
            .with_min_len(256)
            .map(|&(i, j, k)| {
                let (i, j) = (i as usize, j as usize);
                let q = (vs[i] - vs[j]).norm();
                if q > lambda {
                    return Outcome::Violation(q);
                }
                let mut rng = stream(seed, tag::SELF_APPLY, key, k);
                if rng.random::<f64>() * lambda >= q {
                    return Outcome::Rejected;
                }
                let sigma = unit_vector(&mut rng);
                let (vi, vj) = inelastic_unchecked(vs[i], vs[j], sigma, alpha);
                let de = vi.norm_sq() + vj.norm_sq() - vs[i].norm_sq() - vs[j].norm_sq();
                Outcome::Accepted { i, j, vi, vj, de }
            })
            .collect();
        let worst = outcomes
            .iter()
            .filter_map(|o| if let Outcome::Violation(q) = o { Some(*q) } else { None })
            .fold(f64::NAN, f64::max);
        if !worst.is_nan() {
            return Err(worst);
        }
        for o in outcomes {
            if let Outcome::Accepted { i, j, vi, vj, de: d } = o {
                v[i] = vi;
                v[j] = vj;
                de += d;
                accepted += 1;
            }
        }
    }
    Ok((proposed, accepted, de, batches.len()))
}

fn bath_channel(
    v: &mut [Velocity],
    seed: u64,
    key: u64,
    dt: f64,
    lambda: f64,
    bath: &BathMaxwellian,
) -> std::result::Result<(u64, u64, f64), f64> {
    let mean = lambda * dt;
    let poisson = if mean > 0.0 { Poisson::new(mean).ok() } else { None };
    let per_chunk: Vec<std::result::Result<(u64, u64, f64), f64>> = v
        .par_chunks_mut(BATH_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut rng = stream(seed, tag::BATH, key, c as u64);
            let (mut prop, mut acc, mut de) = (0u64, 0u64, 0.0);
            let Some(p) = &poisson else { return Ok((0, 0, 0.0)) };
            for vi in chunk.iter_mut() {
                let k = p.sample(&mut rng) as u64;
                prop += k;
                for _ in 0..k {
                    let w = sample_bath_partner(bath, &mut rng);
                    let q = (*vi - w).norm();
                    if q > lambda {
                        return Err(q);
                    }
                    if rng.random::<f64>() * lambda >= q {
                        continue;
                    }
                    let sigma = unit_vector(&mut rng);
                    let (next, _) = inelastic_unchecked(*vi, w, sigma, 1.0);
                    de += next.norm_sq() - vi.norm_sq();
                    *vi = next;
                    acc += 1;
                }
            }
            Ok((prop, acc, de))
        })
        .collect();
    let mut total = (0, 0, 0.0);
    let mut worst = f64::NAN;
    for r in per_chunk {
        match r {
            Ok((p, a, d)) => {
                total.0 += p;
                total.1 += a;
                total.2 += d;
            }
            Err(q) => worst = worst.max(q),
        }
    }
    if worst.is_nan() { Ok(total) } else { Err(worst) }
}

fn attempt(
    v: &mut [Velocity],
    ens: &Ensemble,
    dt: f64,
    cfg: &DsmcConfig,
    maj: &mut MajorantConfig,
    key: u64,
) -> std::result::Result<Attempt, ()> {
    let mut a = Attempt {
        self_proposed: 0,
        self_accepted: 0,
        bath_proposed: 0,
        bath_accepted: 0,
        de_self: 0.0,
        de_bath: 0.0,
        batches: 0,
    };
    if cfg.self_channel {
        match self_channel(v, ens.seed, key, dt, maj.lambda_self, cfg.params.alpha()) {
            Ok((p, acc, de, b)) => {
                a.self_proposed = p;
                a.self_accepted = acc;
                a.de_self = de;
                a.batches = b;
            }
            Err(q) => {
                maj.lambda_self = cfg.safety * q;
                return Err(());
            }
        }
    }
    if cfg.bath_channel {
        match bath_channel(v, ens.seed, key, dt, maj.lambda_bath, &cfg.bath) {
            Ok((p, acc, de)) => {
                a.bath_proposed = p;
                a.bath_accepted = acc;
                a.de_bath = de;
            }
            Err(q) => {
                maj.lambda_bath = cfg.safety * q;
                return Err(());
            }
        }
    }
    Ok(a)
}

/// Advances the ensemble by `dt`: the self-collision channel followed by the
/// bath channel (first-order splitting). A realized rate above its majorant
/// discards the attempt, enlarges that majorant and redoes the step.
pub fn step(
    ens: &mut Ensemble,
    dt: f64,
    cfg: &DsmcConfig,
    majorant: Option<MajorantConfig>,
) -> Result<StepReport> {
    cfg.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step {dt} must be positive")));
    }
    let start = Instant::now();
    let mut maj = majorant.unwrap_or_else(|| MajorantConfig::refresh(ens, &cfg.bath, cfg.safety));
    if !(maj.lambda_self.is_finite() && maj.lambda_bath.is_finite()) {
        return Err(Error::Numerical(format!("non-finite majorant {maj:?}")));
    }
    let events = maj.events_per_particle(dt, cfg);
    if events > cfg.event_ceiling {
        return Err(Error::StepTooLarge { events, ceiling: cfg.event_ceiling });
    }
    let n = ens.len();
    let mut v = ens.velocities.clone();
    let mut retries = 0u32;
    let result = loop {
        let key = ens.step * MAX_ATTEMPTS + retries as u64;
        let before = maj;
        match attempt(&mut v, ens, dt, cfg, &mut maj, key) {
            Ok(a) => break a,
            Err(()) => {
                retries += 1;
                if retries as u64 >= MAX_ATTEMPTS {
                    let (realized, bound) = if maj.lambda_self != before.lambda_self {
                        (maj.lambda_self / cfg.safety, before.lambda_self)
                    } else {
                        (maj.lambda_bath / cfg.safety, before.lambda_bath)
                    };
                    return Err(Error::MajorantViolation { realized, bound });
                }
                v.copy_from_slice(&ens.velocities);
            }
        }
    };
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: i, time: ens.time + dt });
    }
    ens.velocities = v;
    ens.time += dt;
    ens.step += 1;
    let nf = n as f64;
    let mut warnings = Vec::new();
    for (name, p, a) in [
        ("self", result.self_proposed, result.self_accepted),
        ("bath", result.bath_proposed, result.bath_accepted),
    ] {
        if p >= 1000 && (a as f64) < 1e-3 * p as f64 {
            warnings.push(format!("{name} acceptance ratio {:.2e} below 1e-3", a as f64 / p as f64));
        }
    }
    if retries > 0 {
        warnings.push(format!("majorant enlarged {retries} time(s)"));
    }
    Ok(StepReport {
        step: ens.step,
        time: ens.time,
        dt,
        self_proposed: result.self_proposed,
        self_accepted: result.self_accepted,
        bath_proposed: result.bath_proposed,
        bath_accepted: result.bath_accepted,
        self_rate: 2.0 * result.self_accepted as f64 / (nf * dt),
        bath_rate: result.bath_accepted as f64 / (nf * dt),
        energy_dissipated: -result.de_self / nf,
        bath_energy_gain: result.de_bath / nf,
        batches: result.batches,
        retries,
        majorant: maj,
        warnings,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsmc::{init_ensemble, InitialDistribution};
    use crate::stats::mean_se;

    fn cfg(alpha: f64) -> DsmcConfig {
        DsmcConfig::new(RestitutionParams::new(alpha).unwrap(), BathMaxwellian::standard())
    }

    #[test]
    fn batches_are_conflict_free_and_ordered() {
        let (batches, count) = plan_pairs(3, 7, 50, 200.0);
        assert_eq!(batches.iter().map(|b| b.len() as u64).sum::<u64>(), count);
        let mut last = vec![None::<u64>; 50];
        for b in &batches {
            let mut seen = std::collections::HashSet::new();
            for &(i, j, _) in b {
                assert!(i != j);
                assert!(seen.insert(i) && seen.insert(j));
            }
        }
        for b in &batches {
            for &(i, j, k) in b {
                for p in [i, j] {
                    assert!(last[p as usize].is_none_or(|l| l < k));
                    last[p as usize] = Some(k);
                }
            }
        }
    }

    #[test]
    fn channels_off_leave_ensemble_unchanged() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 1000, 1).unwrap();
        let before = ens.velocities().to_vec();
        let mut c = cfg(0.5);
        c.self_channel = false;
        c.bath_channel = false;
        for _ in 0..10 {
            let r = step(&mut ens, 0.01, &c, None).unwrap();
            assert_eq!(r.self_proposed + r.bath_proposed, 0);
        }
        assert_eq!(ens.velocities(), &before[..]);
        assert_eq!(ens.step_index(), 10);
    }

    #[test]
    fn step_is_worker_count_independent() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = init_ensemble(&InitialDistribution::maxwellian(2.0), 20_000, 9).unwrap();
                for _ in 0..20 {
                    step(&mut ens, 0.005, &cfg(0.7), None).unwrap();
                }
                ens
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    #[test]
    fn cooling_without_bath() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 20_000, 2).unwrap();
        let mut c = cfg(0.5);
        c.bath_channel = false;
        let mut e = ens.energy();
        let p0 = ens.momentum();
        for _ in 0..20 {
            let r = step(&mut ens, 0.01, &c, None).unwrap();
            assert!(r.energy_dissipated > 0.0);
            assert!(ens.energy() < e);
            e = ens.energy();
        }
        assert!((ens.momentum() - p0).norm() < 1e-12);
    }

    #[test]
    fn elastic_self_channel_conserves_energy() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 5000, 4).unwrap();
        let mut c = cfg(1.0);
        c.bath_channel = false;
        let e0 = ens.energy();
        for _ in 0..20 {
            step(&mut ens, 0.01, &c, None).unwrap();
        }
        assert!((ens.energy() - e0).abs() < 1e-12 * e0);
    }

    #[test]
    fn self_rate_matches_pair_average() {
        // accepted pairs per step / (N dt) -> (1/2) E|v - w| as dt -> 0
        let ens0 = init_ensemble(&InitialDistribution::maxwellian(1.0), 4000, 5).unwrap();
        let mut c = cfg(1.0);
        c.bath_channel = false;
        let dt = 1e-3;
        let mut counts = Vec::new();
        for s in 0..400 {
            let mut e = ens0.clone();
            e.step = s;
            let r = step(&mut e, dt, &c, None).unwrap();
            counts.push(r.self_accepted as f64 / (e.len() as f64 * dt));
        }
        let (rate, se) = mean_se(&counts);
        let v = ens0.velocities();
        let mut pair = 0.0;
        for i in 0..v.len() {
            for j in 0..i {
                pair += (v[i] - v[j]).norm();
            }
        }
        let pair = pair / (v.len() * (v.len() - 1) / 2) as f64;
        assert!((rate - 0.5 * pair).abs() < 4.0 * se, "{rate} +- {se} vs {}", 0.5 * pair);
    }

    #[test]
    fn bath_rate_matches_sigma() {
        // a single speed class: accepted bath events / (N dt) -> Sigma(v)
        let v = vec![Velocity::new(1.5, 0.0, 0.0); 4000];
        let ens0 = Ensemble::from_velocities(v, 6).unwrap();
        let mut c = cfg(1.0);
        c.self_channel = false;
        let dt = 1e-3;
        let mut rates = Vec::new();
        for s in 0..200 {
            let mut e = ens0.clone();
            e.step = s;
            rates.push(step(&mut e, dt, &c, None).unwrap().bath_rate);
        }
        let (rate, se) = mean_se(&rates);
        let sigma = crate::kinetics::sigma_bath_closed_form(&c.bath, Velocity::new(1.5, 0.0, 0.0));
        assert!((rate - sigma).abs() < 4.0 * se, "{rate} +- {se} vs {sigma}");
    }

    #[test]
    fn too_large_step_is_refused() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 1000, 1).unwrap();
        assert!(matches!(step(&mut ens, 1.0, &cfg(1.0), None), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn undersized_majorant_is_enlarged() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 2000, 1).unwrap();
        let small = MajorantConfig { lambda_self: 0.5, lambda_bath: 0.5 };
        let r = step(&mut ens, 0.01, &cfg(0.9), Some(small)).unwrap();
        assert!(r.retries > 0);
        assert!(r.majorant.lambda_self > 0.5 || r.majorant.lambda_bath > 0.5);
    }
}
