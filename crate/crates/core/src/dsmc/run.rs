use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;

use super::{step, Checkpoint, DsmcConfig, Ensemble, StepReport};
use crate::error::{invalid, Error, Result};

/// Diagnostic callback on a read-only snapshot.
pub trait Hook {
    fn sample(&mut self, ens: &Ensemble) -> Result<()>;
}

impl<F: FnMut(&Ensemble) -> Result<()>> Hook for F {
    fn sample(&mut self, ens: &Ensemble) -> Result<()> {
        self(ens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Hooks fire when the step counter is a multiple of this (0 disables).
    pub sample_every: u64,
    /// Also fire hooks on the state the run starts from.
    pub sample_initial: bool,
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Directory for the forensic dump written on a non-finite velocity.
    pub dump_dir: Option<PathBuf>,
    pub config_hash: [u8; 32],
}

impl RunOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            sample_every: 0,
            sample_initial: true,
            checkpoint_every: 0,
            checkpoint_path: None,
            dump_dir: None,
            config_hash: [0; 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub reports: Vec<StepReport>,
}

/// Number of steps of size `dt` from `t0` to `t_final`.
fn step_count(t0: f64, t_final: f64, dt: f64) -> Result<u64> {
    if !(t_final > 0.0 && dt > 0.0) {
        return Err(invalid("final time and time step must be positive"));
    }
    let span = t_final - t0;
    if span < -1e-9 * t_final {
        return Err(invalid(format!("ensemble time {t0} is already past {t_final}")));
    }
    let k = (span / dt).round();
    if (k * dt - span).abs() > 1e-9 * t_final.max(1.0) {
        return Err(invalid(format!("{span} is not a multiple of dt = {dt}")));
    }
    Ok(k.max(0.0) as u64)
}

fn dump(ens: &Ensemble, opts: &RunOptions, err: &Error) -> Result<()> {
    let Some(dir) = &opts.dump_dir else { return Ok(()) };
    fs::create_dir_all(dir)?;
    let stem = format!("forensic-step{}", ens.step);
    Checkpoint { ensemble: ens.clone(), config_hash: opts.config_hash }
        .save(&dir.join(format!("{stem}.ckpt")))?;
    let info = serde_json::json!({
        "error": err.to_string(),
        "step": ens.step,
        "time": ens.time,
        "seed": ens.seed,
        "particles": ens.len(),
    });
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&info)?)?;
    Ok(())
}

/// Advances to `t_final`, firing hooks and writing checkpoints on schedule.
pub fn run(
    ens: &mut Ensemble,
    cfg: &DsmcConfig,
    opts: &RunOptions,
    hooks: &mut [&mut dyn Hook],
) -> Result<RunSummary> {
    let steps = step_count(ens.time, opts.t_final, opts.dt)?;
    if opts.checkpoint_every > 0 && opts.checkpoint_path.is_none() {
        return Err(Error::Config("checkpoint interval set without a checkpoint path".into()));
    }
    let due = |every: u64, s: u64| every > 0 && s % every == 0;
    if opts.sample_initial && due(opts.sample_every, ens.step) {
        for h in hooks.iter_mut() {
            h.sample(ens)?;
        }
    }
    let mut reports = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let report = match step(ens, opts.dt, cfg, None) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                dump(ens, opts, &e)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        reports.push(report);
        if due(opts.sample_every, ens.step) {
            for h in hooks.iter_mut() {
                h.sample(ens)?;
            }
        }
        if due(opts.checkpoint_every, ens.step) {
            if let Some(path) = &opts.checkpoint_path {
                Checkpoint { ensemble: ens.clone(), config_hash: opts.config_hash }.save(path)?;
            }
        }
    }
    Ok(RunSummary { steps, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsmc::{config_hash, init_ensemble, InitialDistribution};
    use crate::kinetics::{BathMaxwellian, RestitutionParams, Velocity};

    fn cfg() -> DsmcConfig {
        DsmcConfig::new(RestitutionParams::new(0.8).unwrap(), BathMaxwellian::standard())
    }

    #[test]
    fn ten_over_hundredth_is_thousand_steps() {
        assert_eq!(step_count(0.0, 10.0, 0.01).unwrap(), 1000);
        assert!(step_count(0.0, 10.0, 0.03).is_err());
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 200, 1).unwrap();
        let s = run(&mut ens, &cfg(), &RunOptions::new(10.0, 0.01), &mut []).unwrap();
        assert_eq!(s.steps, 1000);
        assert_eq!(s.reports.len(), 1000);
        assert_eq!(ens.step_index(), 1000);
    }

    #[test]
    fn resume_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let c = cfg();
        let hash = config_hash(&c).unwrap();
        let init = init_ensemble(&InitialDistribution::maxwellian(2.0), 2000, 11).unwrap();

        let mut full = init.clone();
        run(&mut full, &c, &RunOptions::new(0.5, 0.01), &mut []).unwrap();

        let mut first = init.clone();
        let mut opts = RunOptions::new(0.3, 0.01);
        opts.checkpoint_every = 10;
        opts.checkpoint_path = Some(path.clone());
        opts.config_hash = hash;
        run(&mut first, &c, &opts, &mut []).unwrap();
        let mut resumed = Checkpoint::load(&path, Some(&hash)).unwrap().ensemble;
        assert_eq!(resumed, first);
        run(&mut resumed, &c, &RunOptions::new(0.5, 0.01), &mut []).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn hooks_fire_on_schedule() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 100, 1).unwrap();
        let mut times = Vec::new();
        let mut hook = |e: &Ensemble| {
            times.push(e.step_index());
            Ok(())
        };
        let mut opts = RunOptions::new(0.1, 0.01);
        opts.sample_every = 5;
        run(&mut ens, &cfg(), &opts, &mut [&mut hook]).unwrap();
        assert_eq!(times, vec![0, 5, 10]);
    }

    #[test]
    fn non_finite_velocity_aborts_with_dump() {
        let dir = tempfile::tempdir().unwrap();
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 10, 0).unwrap();
        ens.velocities[3] = Velocity::new(f64::NAN, 0.0, 0.0);
        let mut c = cfg();
        c.self_channel = false;
        c.bath_channel = false;
        let mut opts = RunOptions::new(0.01, 0.01);
        opts.dump_dir = Some(dir.path().to_path_buf());
        let err = run(&mut ens, &c, &opts, &mut []).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(dir.path().join("forensic-step0.ckpt").exists());
        assert!(dir.path().join("forensic-step0.json").exists());
    }
}
