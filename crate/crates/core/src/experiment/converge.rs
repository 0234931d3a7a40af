//! Relaxation of a particle run towards the steady state, with the decay
//! rate compared to the spectral gap of the linearized generator.

use serde::{Deserialize, Serialize};
use std::fmt::Write;
use std::path::PathBuf;

use crate::diagnostics::{decay_fit, lambda_fit, relative_entropy, DensityEstimate};
use crate::dsmc::{run, DsmcConfig, Ensemble, RunOptions};
use crate::error::{Error, Result};
use crate::kinetics::RestitutionParams;
use crate::spectral::isotropic_gap;
use crate::stats::mean_se;

use super::config::ExperimentConfig;
use super::pipeline::{initial_ensemble, Workbench};

/// Entropy excess over the plateau below which the run counts as being in
/// the linear regime; by Csiszar-Kullback the L1 distance is then below ~0.3.
pub const LINEAR_ENTROPY: f64 = 0.05;
/// The fit window ends once the distance is within this multiple of the floor.
pub const FLOOR_MULTIPLE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergeSample {
    pub t: f64,
    /// Binned distances to the steady state.
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSeries {
    pub alpha: f64,
    pub samples: Vec<ConvergeSample>,
    /// Gap of the discrete generator on isotropic perturbations.
    pub nu_h: f64,
}

impl ConvergenceSeries {
    pub const CSV_HEADER: &'static str = "t,normX_to_Falpha,normY_to_Falpha,H,E";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{},{}", s.t, s.x, s.y, s.h, s.energy);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    /// Mean X distance over the last quarter of the run.
    pub noise_floor: f64,
    pub h_inf: f64,
    /// Initial distance already within the floor band: nothing to fit.
    pub stationary: bool,
    pub window: Option<(f64, f64)>,
    pub efoldings: f64,
    pub nu_hat: Option<f64>,
    pub nu_ci: Option<(f64, f64)>,
    /// Fitted prefactor of `K exp(-nu t)`.
    pub k_hat: Option<f64>,
    pub k_ci: Option<(f64, f64)>,
    /// Entropy decay constant, when the entropy transient can be fitted.
    pub lambda_hat: Option<f64>,
    pub lambda_ci: Option<(f64, f64)>,
    pub nu_h: f64,
    pub ratio: Option<f64>,
    pub flags: Vec<String>,
}

/// Runs the particle system from the configured initial datum and records
/// the distance to the deterministic steady state at `cfg.alpha`.
pub fn converge_series(cfg: &ExperimentConfig, bench: &Workbench) -> Result<ConvergenceSeries> {
    let alpha = cfg.alpha;
    let steady = if alpha < 1.0 { Some(bench.steady(alpha)?) } else { None };
    let reference = bench.reference(steady.as_ref())?;
    let pieces = bench.pieces(alpha, steady.as_ref())?;
    let nu_h = isotropic_gap(&pieces.l_alpha(&bench.grid, bench.spectral_weights).matrix);

    let mut ens = initial_ensemble(cfg, alpha)?;
    let dsmc = DsmcConfig::new(RestitutionParams::new(alpha)?, bench.bath);
    let mut opts = RunOptions::new(cfg.t_final, cfg.dt);
    opts.sample_every = cfg.sample_every;
    opts.config_hash = hex_hash(cfg)?;
    if cfg.checkpoint_every > 0 {
        opts.checkpoint_every = cfg.checkpoint_every;
        opts.checkpoint_path = Some(checkpoint_path(cfg));
    }
    let spec = bench.grid_spec();
    let mut samples = Vec::new();
    let mut hook = |e: &Ensemble| {
        let f = DensityEstimate::from_samples(e.velocities(), &spec)?;
        let (x, y) = f.distance(&reference, &bench.weights)?;
        let h = relative_entropy(&f, &bench.bath)?.value;
        samples.push(ConvergeSample { t: e.time(), x, y, h, energy: e.energy() });
        Ok(())
    };
    run(&mut ens, &dsmc, &opts, &mut [&mut hook])?;
    Ok(ConvergenceSeries { alpha, samples, nu_h })
}

pub(crate) fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join("run.ckpt")
}

pub(crate) fn hex_hash(cfg: &ExperimentConfig) -> Result<[u8; 32]> {
    let h = hex::decode(cfg.hash()?).map_err(|e| Error::Config(e.to_string()))?;
    Ok(h.try_into().expect("sha256 digest"))
}

/// Fits `|f(t) - F|_X ~ K exp(-nu t)` after the entropy has entered the
/// linear regime and before the distance reaches the noise floor.
pub fn fit_convergence(series: &ConvergenceSeries) -> Result<ConvergenceFit> {
    let s = &series.samples;
    if s.len() < 20 {
        return Err(Error::Fit(format!("need at least 20 snapshots, got {}", s.len())));
    }
    let tail = &s[3 * s.len() / 4..];
    let (noise_floor, _) = mean_se(&tail.iter().map(|p| p.x).collect::<Vec<_>>());
    let (h_inf, _) = mean_se(&tail.iter().map(|p| p.h).collect::<Vec<_>>());
    let mut flags = Vec::new();
    let half = tail.len() / 2;
    let early = mean_se(&tail[..half].iter().map(|p| p.x).collect::<Vec<_>>()).0;
    let late = mean_se(&tail[half..].iter().map(|p| p.x).collect::<Vec<_>>()).0;
    if early > 1.5 * late {
        flags.push("distance still decaying in the last quarter; floor overestimated".into());
    }
    let times: Vec<f64> = s.iter().map(|p| p.t).collect();
    let hs: Vec<f64> = s.iter().map(|p| p.h).collect();
    let (lambda_hat, lambda_ci) = match lambda_fit(&times, &hs, series.alpha) {
        Ok(f) => (Some(f.lambda), Some(f.lambda_ci)),
        Err(e) => {
            flags.push(format!("entropy decay not fitted: {e}"));
            (None, None)
        }
    };
    let band = FLOOR_MULTIPLE * noise_floor;
    let mut fit = ConvergenceFit {
        noise_floor,
        h_inf,
        stationary: false,
        window: None,
        efoldings: 0.0,
        nu_hat: None,
        nu_ci: None,
        k_hat: None,
        k_ci: None,
        lambda_hat,
        lambda_ci,
        nu_h: series.nu_h,
        ratio: None,
        flags,
    };
    if s[0].x <= band {
        fit.stationary = true;
        fit.flags.push(format!("initial distance {:.3e} within the noise band {band:.3e}", s[0].x));
        return Ok(fit);
    }
    let start = s
        .iter()
        .position(|p| p.h - h_inf <= LINEAR_ENTROPY)
        .ok_or_else(|| Error::Fit("entropy never enters the linear regime; lengthen the run".into()))?;
    let end = start + s[start..].iter().take_while(|p| p.x > band).count();
    let efoldings = if end > start { (s[start].x / s[end - 1].x).ln() } else { 0.0 };
    if end - start < 3 || efoldings < 1.0 {
        return Err(Error::Fit(format!(
            "distance reaches the noise floor {noise_floor:.3e} after {efoldings:.2} e-foldings; increase the particle count"
        )));
    }
    let d = decay_fit(&times[start..end], &s[start..end].iter().map(|p| p.x).collect::<Vec<_>>())?;
    let (lo, hi) = d.regression.intercept_ci(0.95);
    fit.window = Some((times[start], times[end - 1]));
    fit.efoldings = efoldings;
    fit.nu_hat = Some(d.rate);
    fit.nu_ci = Some(d.rate_ci);
    fit.k_hat = Some(d.amplitude);
    fit.k_ci = Some((lo.exp(), hi.exp()));
    let ratio = d.rate / series.nu_h;
    fit.ratio = Some(ratio);
    if !(0.5..=1.5).contains(&ratio) {
        fit.flags.push(format!("nu_hat / nu_h = {ratio:.3} outside [0.5, 1.5]"));
    }
    if !(d.rate_ci.0 > 0.0) {
        fit.flags.push("decay rate interval includes 0".into());
    }
    Ok(fit)
}

/// Series plus fit; the fit error is returned after the series is complete.
pub fn converge_experiment(cfg: &ExperimentConfig) -> Result<(ConvergenceSeries, ConvergenceFit)> {
    let bench = Workbench::new(cfg)?;
    let series = converge_series(cfg, &bench)?;
    let fit = fit_convergence(&series)?;
    Ok((series, fit))
}
