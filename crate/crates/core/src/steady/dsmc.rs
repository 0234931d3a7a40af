//! Steady state as the long-time average of the particle system.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DensityEstimate, GridSpec};
use crate::dsmc::{exp_moment, init_ensemble, run, DsmcConfig, Ensemble, InitialDistribution, RunOptions};
use crate::error::{invalid, Error, Result};
use crate::kinetics::{inelastic_transform, Velocity, WeightSpec};
use crate::rng::{sample_bath_partner, stream, unit_vector};
use crate::stats::{batch_means_se, mean_se};

/// Stream tag of the residual estimator.
const TAG_RESIDUAL: u64 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsmcSteadySettings {
    pub particles: usize,
    pub t_burn: f64,
    pub t_avg: f64,
    pub dt: f64,
    pub seed: u64,
    /// Steps between histogram snapshots during averaging.
    pub sample_every: u64,
    /// Extra burn-in segments of length `t_burn` before giving up.
    pub max_extensions: usize,
    pub residual_pairs: usize,
    pub residual_snapshots: usize,
    /// Rate `r` of the monitored moment `int f exp(r |v|)`.
    pub exp_rate: f64,
}

impl DsmcSteadySettings {
    pub fn new(particles: usize, t_burn: f64, t_avg: f64, seed: u64) -> Self {
        Self {
            particles,
            t_burn,
            t_avg,
            dt: 0.01,
            seed,
            sample_every: 10,
            max_extensions: 4,
            residual_pairs: 1_000_000,
            residual_snapshots: 16,
            exp_rate: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.particles < 100 {
            return Err(invalid("steady DSMC needs at least 100 particles"));
        }
        if !(self.t_burn > 0.0 && self.t_avg > 0.0 && self.dt > 0.0) {
            return Err(invalid("burn-in, averaging time and dt must be positive"));
        }
        if self.sample_every == 0 || self.residual_snapshots < 2 || self.residual_pairs < 1000 {
            return Err(invalid("sampling interval, residual snapshots and pairs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsmcSteadyLog {
    pub burn_time: f64,
    pub extensions: usize,
    /// Integrated autocorrelation time of the energy.
    pub tau: f64,
    pub snapshots: usize,
    /// Effective number of independent samples behind the averaged histogram.
    pub n_eff: f64,
    /// `(t, log int f exp(r|v|))` along the averaging window.
    pub exp_moment: Vec<(f64, f64)>,
    pub residual_se: f64,
    pub bin_residuals: Vec<f64>,
}

pub(crate) struct DsmcSteady {
    pub estimate: DensityEstimate,
    pub energy: f64,
    pub energy_se: f64,
    pub residual: f64,
    pub residual_tol: f64,
    /// Per-bin density noise.
    pub floors: Vec<f64>,
    pub log: DsmcSteadyLog,
}

/// Integrated autocorrelation time, summed up to the first negative lag.
pub fn integrated_autocorrelation(xs: &[f64], dt: f64) -> f64 {
    let n = xs.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5 * dt;
    }
    let mut tau = 0.5;
    for lag in 1..n / 2 {
        let c = xs[..n - lag].iter().zip(&xs[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>()
            / (n as f64 * c0);
        if c <= 0.0 {
            break;
        }
        tau += c;
    }
    tau * dt
}

/// Middle and last thirds of a series disagree by more than `3 sigma`.
pub fn drifting(xs: &[f64]) -> bool {
    let k = xs.len() / 3;
    if k < 20 {
        return true;
    }
    let (mid, last) = (&xs[k..2 * k], &xs[2 * k..]);
    let m = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let se = (batch_means_se(mid, 10).powi(2) + batch_means_se(last, 10).powi(2)).sqrt();
    (m(last) - m(mid)).abs() > 3.0 * se
}

fn energy_about(ens: &Ensemble, u0: Velocity) -> f64 {
    ens.velocities().iter().map(|&v| (v - u0).norm_sq()).sum::<f64>() / ens.len() as f64
}

/// Hat functions in the speed peaked at the bin representatives; they sum
/// to one everywhere.
struct Hats {
    peaks: Vec<f64>,
}

impl Hats {
    /// Nonzero `(bin, value)` pairs at speed `r`.
    fn eval(&self, r: f64) -> [(usize, f64); 2] {
        let p = &self.peaks;
        let n = p.len();
        if r <= p[0] {
            return [(0, 1.0), (0, 0.0)];
        }
        if r >= p[n - 1] {
            return [(n - 1, 1.0), (n - 1, 0.0)];
        }
        let k = p.partition_point(|&x| x <= r) - 1;
        let t = (r - p[k]) / (p[k + 1] - p[k]);
        [(k, 1.0 - t), (k + 1, t)]
    }
}

/// Monte Carlo estimate of `<Q(F,F) + L F, psi_b>` for each hat `psi_b`.
/// Each snapshot gets an equal share of the draws; the standard errors come
/// from the spread between snapshots, so they include the sampling noise of
/// the snapshots themselves.
pub(crate) fn weak_residual(
    snapshots: &[Vec<Velocity>],
    cfg: &DsmcConfig,
    peaks: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if snapshots.len() < 2 || snapshots.iter().any(|s| s.len() < 2) {
        return Err(invalid("the residual estimate needs at least two snapshots of two particles"));
    }
    let hats = Hats { peaks: peaks.to_vec() };
    let nb = peaks.len();
    let alpha = cfg.params.alpha();
    let u0 = cfg.bath.u0;
    let per = (pairs / snapshots.len()).max(1);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(snapshots.len());
    for (k, snap) in snapshots.iter().enumerate() {
        let mut rng = stream(seed, TAG_RESIDUAL, 0, k as u64);
        let mut s = vec![0.0; nb];
        for _ in 0..per {
            let i = rng.random_range(0..snap.len());
            let mut j = rng.random_range(0..snap.len() - 1);
            if j >= i {
                j += 1;
            }
            let (v, w) = (snap[i], snap[j]);
            let (vp, _) = inelastic_transform(v, w, unit_vector(&mut rng), alpha)?;
            let x = sample_bath_partner(&cfg.bath, &mut rng);
            let (vb, _) = inelastic_transform(v, x, unit_vector(&mut rng), 1.0)?;
            let (g_self, g_bath) = ((v - w).norm(), (v - x).norm());
            let at = |u: Velocity| hats.eval((u - u0).norm());
            for (hs, c) in [(at(vp), g_self), (at(v), -g_self - g_bath), (at(vb), g_bath)] {
                for (b, h) in hs {
                    s[b] += c * h;
                }
            }
        }
        means.push(s.iter().map(|x| x / per as f64).collect());
    }
    let mut mean = vec![0.0; nb];
    let mut se = vec![0.0; nb];
    for b in 0..nb {
        let col: Vec<f64> = means.iter().map(|m| m[b]).collect();
        (mean[b], se[b]) = mean_se(&col);
    }
    Ok((mean, se))
}

pub(crate) fn run_dsmc(cfg: &DsmcConfig, settings: &DsmcSteadySettings, edges: &[f64], weights: &WeightSpec) -> Result<DsmcSteady> {
    settings.validate()?;
    cfg.validate()?;
    let bath = cfg.bath;
    let start = InitialDistribution::Maxwellian { u: bath.u0, theta: bath.theta0 };
    let mut ens = init_ensemble(&start, settings.particles, settings.seed)?;

    // burn-in with energy monitoring
    let mut energies: Vec<f64> = Vec::new();
    let mut extensions = 0;
    let tau = loop {
        let mut record = |e: &Ensemble| {
            energies.push(energy_about(e, bath.u0));
            Ok(())
        };
        let mut opts = RunOptions::new(ens.time() + settings.t_burn, settings.dt);
        opts.sample_every = 1;
        opts.sample_initial = false;
        run(&mut ens, cfg, &opts, &mut [&mut record])?;
        let tail = &energies[energies.len() / 2..];
        let tau = integrated_autocorrelation(tail, settings.dt);
        if !drifting(&energies) && ens.time() >= 5.0 * tau {
            break tau;
        }
        if extensions == settings.max_extensions {
            return Err(Error::Numerical(format!(
                "burn-in not converged after {:.1} time units (energy drifting or tau = {tau:.2})",
                ens.time()
            )));
        }
        extensions += 1;
    };
    let burn_time = ens.time();

    // averaging
    let spec = GridSpec::Radial { center: bath.u0, edges: edges.to_vec() };
    let total_steps = (settings.t_avg / settings.dt).round() as u64;
    let snap_every = (total_steps / settings.residual_snapshots as u64).max(1);
    let mut hists = Vec::new();
    let mut e_series = Vec::new();
    let mut exp_log = Vec::new();
    let mut snapshots = Vec::new();
    let t0 = ens.time();
    let step0 = ens.step_index();
    {
        let mut sample = |e: &Ensemble| -> Result<()> {
            let k = e.step_index() - step0;
            if k % settings.sample_every == 0 {
                hists.push(DensityEstimate::from_samples(e.velocities(), &spec)?);
                e_series.push(energy_about(e, bath.u0));
                exp_log.push((e.time() - t0, exp_moment(e, settings.exp_rate, 1.0)?.log_value));
            }
            if k % snap_every == 0 && snapshots.len() < settings.residual_snapshots {
                snapshots.push(e.velocities().to_vec());
            }
            Ok(())
        };
        let mut opts = RunOptions::new(t0 + settings.t_avg, settings.dt);
        opts.sample_every = 1;
        opts.sample_initial = false;
        run(&mut ens, cfg, &opts, &mut [&mut sample])?;
    }
    let estimate = DensityEstimate::average(&hists)?;
    let energy = mean_se(&e_series).0;
    let energy_se = batch_means_se(&e_series, 10);
    let n = settings.particles as f64;
    let n_eff = (n * hists.len() as f64).min(n * settings.t_avg / (2.0 * tau).max(settings.dt));
    let vols: Vec<f64> = edges.windows(2).map(|w| 4.0 * std::f64::consts::PI / 3.0 * (w[1].powi(3) - w[0].powi(3))).collect();
    let floors: Vec<f64> = estimate
        .masses()
        .iter()
        .zip(&vols)
        .map(|(m, v)| (m.max(1.0 / n_eff) / n_eff).sqrt() / v)
        .collect();
    let peaks = estimate.bin_speeds();
    let (bins, se) = weak_residual(&snapshots, cfg, &peaks, settings.residual_pairs, settings.seed)?;
    let residual = weights.x_norm(peaks.iter().copied().zip(bins.iter().copied()));
    let residual_se = weights.x_norm(peaks.iter().copied().zip(se.iter().copied()));
    Ok(DsmcSteady {
        estimate,
        energy,
        energy_se,
        residual,
        residual_tol: 3.0 * residual_se,
        floors,
        log: DsmcSteadyLog {
            burn_time,
            extensions,
            tau,
            snapshots: hists.len(),
            n_eff,
            exp_moment: exp_log,
            residual_se,
            bin_residuals: bins,
        },
    })
}
