//! Experiment orchestration: configuration, the six experiment kinds, output
//! files, JSON summaries and run manifests.
//!
//! Every run writes into its output directory a set of CSV/JSON/binary
//! files, `summary.json` and `manifest.json`. Only the manifest carries
//! timestamps; everything else is a pure function of the configuration hash
//! and is byte-identical across re-runs and worker counts.

pub mod config;
pub mod converge;
pub mod manifest;
pub mod pipeline;
pub mod sweep;

pub use config::{ExperimentConfig, ExperimentKind, InitSpec, RouteChoice};
pub use converge::{
    converge_experiment, converge_series, fit_convergence, ConvergeSample, ConvergenceFit, ConvergenceSeries,
    FLOOR_MULTIPLE, LINEAR_ENTROPY,
};
pub use manifest::{FileDigest, RunManifest, MANIFEST_FILE};
pub use pipeline::{entropy_run, initial_ensemble, Workbench};
pub use sweep::{sweep_alpha, GapTable, PlateauRow, PlateauTable, SweepFailure, SweepReport};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dsmc::{exp_moment, run, Checkpoint, DsmcConfig, Ensemble, RunOptions};
use crate::error::{Error, Result};
use crate::kinetics::RestitutionParams;
use crate::rng::subseed;
use crate::spectral::{calibrate_cut, export_matrix, spectral_report};
use crate::steady::{cross_validate, steady_dsmc, DsmcSteadySettings, SteadyStateResult};

pub const SUMMARY_FILE: &str = "summary.json";
/// First cut radius tried by the dissipativity calibration, in units of `sqrt(theta0)`.
pub const CUT_START: f64 = 3.0;
pub const CUT_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NumericalFailure,
}

/// The JSON summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    /// A number, or the list of a sweep.
    pub alpha: Value,
    pub fitted: Map<String, Value>,
    pub flags: Vec<String>,
    pub status: Status,
    pub error: Option<String>,
    pub manifest_ref: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.summary.status != Status::Ok
    }
}

/// Exit status of a finished run: 0 success, 2 invalid configuration,
/// 3 numerical failure, 1 I/O trouble.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if !o.failed() => 0,
        Ok(_) => 3,
        Err(Error::Config(_) | Error::InvalidInput(_)) => 2,
        Err(Error::Io(_) | Error::Json(_)) => 1,
        Err(_) => 3,
    }
}

/// Collects the files a run writes, in order.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)?)
    }
}

/// What an experiment body hands back to the runner.
struct Body {
    alpha: Value,
    fitted: Map<String, Value>,
    flags: Vec<String>,
    seeds: Vec<u64>,
    error: Option<String>,
}

impl Body {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self { alpha: json!(cfg.alpha), fitted: Map::new(), flags: Vec::new(), seeds: vec![cfg.seed], error: None }
    }

    fn fit(&mut self, key: &str, value: impl Serialize) {
        self.fitted.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

/// Validates, runs and records one experiment. Validation errors are
/// returned before anything is written; numerical failures produce the
/// partial outputs, a summary with `status = numerical_failure` and a manifest.
pub fn run_experiment(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir)?;
    let started = manifest::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    let mut body = Body::new(cfg);
    let result = pool.install(|| match cfg.experiment {
        ExperimentKind::Simulate => simulate(cfg, &mut out, &mut body),
        ExperimentKind::Steady => steady(cfg, &mut out, &mut body),
        ExperimentKind::Spectrum => spectrum(cfg, &mut out, &mut body),
        ExperimentKind::Entropy => entropy(cfg, &mut out, &mut body),
        ExperimentKind::Sweep => sweep(cfg, &mut out, &mut body),
        ExperimentKind::Converge => converge(cfg, &mut out, &mut body),
    });
    match result {
        Ok(()) => {}
        Err(e @ Error::Io(_)) => return Err(e),
        Err(e) => body.error = Some(e.to_string()),
    }
    let ckpt = converge::checkpoint_path(cfg);
    if cfg.checkpoint_every > 0 && ckpt.exists() && !out.files.iter().any(|f| f == "run.ckpt") {
        out.files.push("run.ckpt".into());
    }
    let summary = Summary {
        experiment: cfg.experiment,
        alpha: body.alpha,
        fitted: body.fitted,
        flags: body.flags,
        status: if body.error.is_some() { Status::NumericalFailure } else { Status::Ok },
        error: body.error,
        manifest_ref: MANIFEST_FILE.into(),
    };
    out.json(SUMMARY_FILE, &summary)?;
    let outputs = out
        .files
        .iter()
        .map(|f| FileDigest::of(&dir.join(f), f.clone()))
        .collect::<Result<Vec<_>>>()?;
    let inputs = inputs
        .iter()
        .map(|p| FileDigest::of(p, p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let mut seeds = body.seeds;
    seeds.dedup();
    let manifest = RunManifest {
        config_hash: cfg.hash()?,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seeds,
        started,
        finished: manifest::now(),
        workers: cfg.workers,
        inputs,
        outputs,
        config: cfg.clone(),
    };
    manifest.save(&dir)?;
    Ok(RunOutcome { summary, manifest, dir })
}

/// Re-runs the configuration recorded in a manifest into `output`.
pub fn rerun_from_manifest(manifest: &Path, output: &Path, workers: Option<usize>) -> Result<RunOutcome> {
    let m = RunManifest::load(manifest)?;
    let mut cfg = m.config;
    cfg.output = output.to_path_buf();
    if let Some(w) = workers {
        cfg.workers = w;
    }
    run_experiment(&cfg, &[manifest.to_path_buf()])
}

fn simulate(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    if !matches!(cfg.init, InitSpec::Explicit { .. }) {
        body.seeds.push(subseed(cfg.seed, pipeline::BURN_SEED));
    }
    let mut ens = initial_ensemble(cfg, cfg.alpha)?;
    let dsmc = DsmcConfig::new(RestitutionParams::new(cfg.alpha)?, cfg.bath()?);
    let mut opts = RunOptions::new(cfg.t_final, cfg.dt);
    opts.sample_every = cfg.sample_every;
    opts.config_hash = converge::hex_hash(cfg)?;
    opts.dump_dir = Some(cfg.output.join("forensic"));
    if cfg.checkpoint_every > 0 {
        opts.checkpoint_every = cfg.checkpoint_every;
        opts.checkpoint_path = Some(converge::checkpoint_path(cfg));
    }
    let mut csv = String::from("t,E,px,py,pz,log_exp_moment\n");
    let mut hook = |e: &Ensemble| {
        let p = e.momentum();
        let m = exp_moment(e, 1.0, 1.0)?;
        let _ = writeln!(csv, "{},{},{},{},{},{}", e.time(), e.energy(), p.x, p.y, p.z, m.log_value);
        Ok(())
    };
    let result = run(&mut ens, &dsmc, &opts, &mut [&mut hook]);
    out.write("series.csv", &csv)?;
    let summary = result?;
    let (mut sp, mut sa, mut bp, mut ba, mut diss) = (0u64, 0u64, 0u64, 0u64, 0.0);
    for r in &summary.reports {
        sp += r.self_proposed;
        sa += r.self_accepted;
        bp += r.bath_proposed;
        ba += r.bath_accepted;
        diss += r.energy_dissipated;
    }
    let ckpt = Checkpoint { ensemble: ens.clone(), config_hash: opts.config_hash };
    out.write("final.ckpt", ckpt.to_bytes())?;
    body.fit("steps", summary.steps);
    body.fit("final_energy", ens.energy());
    body.fit("final_momentum", ens.momentum().to_array());
    body.fit("self_acceptance", sa as f64 / sp.max(1) as f64);
    body.fit("bath_acceptance", ba as f64 / bp.max(1) as f64);
    body.fit("energy_dissipated", diss);
    Ok(())
}

fn steady_fitted(body: &mut Body, prefix: &str, r: &SteadyStateResult) {
    body.fit(&format!("{prefix}_energy"), r.energy);
    body.fit(&format!("{prefix}_normX_to_M"), r.distance_to_bath.0);
    body.fit(&format!("{prefix}_normY_to_M"), r.distance_to_bath.1);
    body.fit(&format!("{prefix}_residual"), r.residual);
    body.fit(&format!("{prefix}_residual_tol"), r.residual_tol);
    if let Some(s) = &r.sandwich {
        body.fit(&format!("{prefix}_theta_lower"), s.lower.as_ref().map(|e| e.theta));
        body.fit(&format!("{prefix}_theta_upper"), s.upper.as_ref().map(|e| e.theta));
        body.fit(&format!("{prefix}_sandwich_passed"), s.passed);
    }
    body.flags.extend(r.flags.iter().map(|f| format!("{prefix}: {f}")));
}

fn steady(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    let bench = Workbench::new(cfg)?;
    let det = matches!(cfg.route, RouteChoice::Deterministic | RouteChoice::Both);
    let mc = matches!(cfg.route, RouteChoice::Dsmc | RouteChoice::Both);
    let mut results = Vec::new();
    if det {
        let r = bench.steady(cfg.alpha)?;
        out.write("steady_deterministic.csv", r.to_csv())?;
        out.write("steady_deterministic.json", r.to_json()?)?;
        steady_fitted(body, "deterministic", &r);
        results.push(r);
    }
    if mc {
        let dsmc = DsmcConfig::new(RestitutionParams::new(cfg.alpha)?, bench.bath);
        let mut s = DsmcSteadySettings::new(cfg.particles, cfg.t_burn, cfg.t_avg, cfg.seed);
        s.dt = cfg.dt;
        s.sample_every = cfg.sample_every;
        let r = steady_dsmc(&dsmc, &s, &bench.steady_options())?;
        out.write("steady_dsmc.csv", r.to_csv())?;
        out.write("steady_dsmc.json", r.to_json()?)?;
        steady_fitted(body, "dsmc", &r);
        results.push(r);
    }
    if let [a, b] = &results[..] {
        let check = cross_validate(a, b, cfg.cross_tol)?;
        body.fit("cross_normX", check.distance_x);
        body.fit("cross_normY", check.distance_y);
        body.fit("cross_tolerance", check.tolerance);
    }
    Ok(())
}

fn spectrum(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    let bench = Workbench::new(cfg)?;
    let (pieces, op) = bench.generator(cfg.alpha)?;
    export_matrix(&op, &cfg.output.join("l_alpha"))?;
    out.files.push("l_alpha.bin".into());
    out.files.push("l_alpha.json".into());
    let report = spectral_report(&op, cfg.seed)?;
    let mut csv = String::from("re,im\n");
    for (re, im) in &report.eigenvalues {
        let _ = writeln!(csv, "{re},{im}");
    }
    out.write("eigenvalues.csv", &csv)?;
    out.json("spectrum.json", &report)?;
    body.fit("nu_h", report.isotropic_gap);
    body.fit("mu_hat", report.decay.mu_hat);
    body.fit("c_mu", report.decay.c_mu);
    body.fit("lambda0", report.lambda0);
    body.fit("zero_mode_residual", report.zero_mode.residual);
    body.flags.extend(report.flags.iter().cloned());
    let s = bench.bath.theta0.sqrt();
    let diss = calibrate_cut(&pieces, &bench.grid, bench.spectral_weights, CUT_START * s, CUT_STEP * s, cfg.seed)?;
    out.json("dissipativity.json", &diss)?;
    body.fit("r_cut", diss.r_cut);
    body.fit("beta_star", diss.beta_star);
    body.fit("dissipativity_margin", diss.margin);
    body.fit("dissipativity_certificate", diss.certificate);
    Ok(())
}

fn entropy(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    let bench = Workbench::new(cfg)?;
    body.seeds.push(subseed(cfg.seed, pipeline::DIAGNOSTIC_SEED));
    let report = entropy_run(cfg, &bench)?;
    out.write("entropy.csv", report.to_csv())?;
    out.json("entropy.json", &report.summary_json())?;
    body.flags.extend(report.flags.iter().cloned());
    if let Some(b) = &report.balance {
        body.fit("balance_within_3sigma", b.within_3sigma);
    }
    let fit = report.fit.as_ref().ok_or_else(|| Error::Fit("entropy decay could not be fitted".into()))?;
    body.fit("lambda_hat", fit.lambda);
    body.fit("lambda_hat_ci", fit.lambda_ci);
    body.fit("plateau", fit.plateau);
    body.fit("plateau_se", fit.plateau_se);
    body.fit("K_hat", fit.k);
    body.fit("K_hat_ci", fit.k_ci);
    body.fit("efoldings", fit.efoldings);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    let report = sweep_alpha(cfg)?;
    body.alpha = json!(report.alphas);
    for k in 0..report.alphas.len() {
        body.seeds.push(sweep::sweep_seed(cfg, k));
    }
    for e in &report.entropy {
        out.write(&format!("entropy_alpha{}.csv", e.alpha), e.to_csv())?;
    }
    if let Some(p) = &report.plateau {
        out.write("plateau.csv", p.to_csv())?;
        body.fit("plateau_slope", p.slope);
        body.fit("plateau_slope_ci", p.slope_ci);
        body.fit("plateau_intercept", p.intercept);
        body.fit("plateau_intercept_ci", p.intercept_ci);
        body.fit("plateau_spearman", p.spearman);
        body.fit("plateau_passed", p.passed);
        let k: Vec<Value> = p.rows.iter().map(|r| json!({"alpha": r.alpha, "lambda_hat": r.lambda, "ci": r.lambda_ci})).collect();
        body.fit("lambda_hat", k);
    }
    for l in &report.limits {
        let name = serde_json::to_value(l.route)?.as_str().unwrap_or("route").to_string();
        out.write(&format!("limit_{name}.csv"), l.to_csv())?;
        body.fit(&format!("limit_{name}_passed"), l.passed);
        body.fit(&format!("limit_{name}_noise_floor"), l.noise_floor);
        body.flags.extend(l.flags.iter().map(|f| format!("limit {name}: {f}")));
    }
    if let Some(g) = &report.gaps {
        out.write("gaps.csv", g.to_csv())?;
        body.fit("elastic_gap", g.elastic_gap);
        body.fit("gap_retained", g.gap_retained);
        body.fit("drift_monotone", g.monotone);
        body.flags.extend(g.drift.flags.iter().cloned());
    }
    out.write("failures.csv", report.failures_csv())?;
    out.json("sweep.json", &json!({
        "plateau": report.plateau,
        "limits": report.limits,
        "gaps": report.gaps,
        "failures": report.failures,
    }))?;
    if !report.failures.is_empty() {
        body.error = Some(format!("{} sub-runs failed; see failures.csv", report.failures.len()));
    } else if !report.passed() {
        body.flags.push("trend tests failed".into());
    }
    Ok(())
}

fn converge(cfg: &ExperimentConfig, out: &mut Outputs, body: &mut Body) -> Result<()> {
    let bench = Workbench::new(cfg)?;
    if !matches!(cfg.init, InitSpec::Explicit { .. }) {
        body.seeds.push(subseed(cfg.seed, pipeline::BURN_SEED));
    }
    let series = converge_series(cfg, &bench)?;
    out.write("converge.csv", series.to_csv())?;
    body.fit("nu_h", series.nu_h);
    let fit = fit_convergence(&series)?;
    out.json("converge.json", &fit)?;
    body.fit("nu_hat", fit.nu_hat);
    body.fit("nu_hat_ci", fit.nu_ci);
    body.fit("K_hat", fit.k_hat);
    body.fit("K_hat_ci", fit.k_ci);
    body.fit("lambda_hat", fit.lambda_hat);
    body.fit("lambda_hat_ci", fit.lambda_ci);
    body.fit("nu_ratio", fit.ratio);
    body.fit("noise_floor", fit.noise_floor);
    body.fit("window", fit.window);
    body.fit("efoldings", fit.efoldings);
    body.fit("stationary", fit.stationary);
    body.flags.extend(fit.flags.iter().cloned());
    Ok(())
}
