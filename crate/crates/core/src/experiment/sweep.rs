//! Alpha sweeps: entropy plateaus, the elastic-limit curve and the drift of
//! the linearized generator, with trend tests and a ledger of failed sub-runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write;

use crate::diagnostics::EntropyReport;
use crate::error::{Error, Result};
use crate::rng::subseed;
use crate::spectral::{alpha_drift, DriftTable};
use crate::stats::{linear_regression, spearman};
use crate::steady::{elastic_limit_curve, LimitTable, RouteSpec};

use super::config::{ExperimentConfig, RouteChoice};
use super::pipeline::{entropy_run, Workbench};

/// Derived-seed offset of the per-alpha entropy runs.
pub const SWEEP_SEED_BASE: u64 = 16;
/// Gap retained along the sweep, relative to the elastic gap.
pub const GAP_FRACTION: f64 = 0.8;
/// Alphas at and above this must keep the gap fraction.
pub const GAP_ALPHA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauRow {
    pub alpha: f64,
    pub seed: u64,
    pub plateau: f64,
    pub plateau_se: f64,
    pub lambda: f64,
    pub lambda_ci: (f64, f64),
}

/// Regression of the entropy plateau on `1 - alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauTable {
    pub rows: Vec<PlateauRow>,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub intercept_ci: (f64, f64),
    /// Spearman correlation of the plateau with `1 - alpha`.
    pub spearman: f64,
    pub passed: bool,
}

impl PlateauTable {
    pub fn from_rows(mut rows: Vec<PlateauRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        if rows.len() < 3 {
            return Err(Error::Fit(format!("plateau regression needs 3 alphas, got {}", rows.len())));
        }
        let x: Vec<f64> = rows.iter().map(|r| 1.0 - r.alpha).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.plateau).collect();
        let fit = linear_regression(&x, &y)?;
        let slope_ci = fit.slope_ci(0.95);
        let intercept_ci = fit.intercept_ci(0.95);
        let rho = spearman(&x, &y);
        let passed = slope_ci.0 > 0.0 && intercept_ci.0 <= 0.0 && 0.0 <= intercept_ci.1 && rho > 0.9;
        Ok(Self { rows, slope: fit.slope, slope_ci, intercept: fit.intercept, intercept_ci, spearman: rho, passed })
    }

    pub const CSV_HEADER: &'static str = "alpha,seed,plateau,plateau_se,lambda,lambda_lo,lambda_hi";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.alpha, r.seed, r.plateau, r.plateau_se, r.lambda, r.lambda_ci.0, r.lambda_ci.1
            );
        }
        out
    }
}

/// Drift table plus the gap retention check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub drift: DriftTable,
    pub elastic_gap: f64,
    /// `gap(alpha) >= 0.8 gap(1)` for every `alpha >= 0.95`.
    pub gap_retained: bool,
    /// All three drifts decrease towards `alpha = 1` (Spearman < -0.9).
    pub monotone: bool,
}

impl GapTable {
    pub fn new(drift: DriftTable) -> Result<Self> {
        let elastic_gap = drift
            .rows
            .iter()
            .find(|r| r.alpha == 1.0)
            .map(|r| r.gap)
            .ok_or_else(|| Error::Numerical("drift table has no elastic row".into()))?;
        let gap_retained = drift.rows.iter().filter(|r| r.alpha >= GAP_ALPHA).all(|r| r.gap >= GAP_FRACTION * elastic_gap);
        let monotone = drift.operator_trend < -0.9 && drift.zero_mode_trend < -0.9 && drift.resolvent_trend < -0.9;
        Ok(Self { drift, elastic_gap, gap_retained, monotone })
    }

    pub const CSV_HEADER: &'static str = "alpha,gap,lambda0,operator_drift,zero_mode_drift,resolvent_drift";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.drift.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.alpha, r.gap, r.lambda0, r.operator_drift, r.zero_mode_drift, r.resolvent_drift
            );
        }
        out
    }
}

/// One failed sub-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub stage: String,
    pub alpha: Option<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub alphas: Vec<f64>,
    pub entropy: Vec<EntropyReport>,
    pub plateau: Option<PlateauTable>,
    pub limits: Vec<LimitTable>,
    pub gaps: Option<GapTable>,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub const FAILURE_HEADER: &'static str = "stage,alpha,error";

    pub fn failures_csv(&self) -> String {
        let mut out = String::from(Self::FAILURE_HEADER);
        out.push('\n');
        for f in &self.failures {
            let a = f.alpha.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},\"{}\"", f.stage, a, f.error.replace('"', "'"));
        }
        out
    }

    /// Every trend test that ran passed and no sub-run failed.
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self.plateau.as_ref().is_some_and(|p| p.passed)
            && self.limits.iter().all(|l| l.passed)
            && self.gaps.as_ref().is_some_and(|g| g.gap_retained && g.monotone)
    }
}

/// Seed of the entropy run at position `k` of the sorted alpha list.
pub fn sweep_seed(cfg: &ExperimentConfig, k: usize) -> u64 {
    subseed(cfg.seed, SWEEP_SEED_BASE + k as u64)
}

fn sorted_alphas(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    if cfg.alphas.is_empty() {
        return Err(Error::Config("sweep needs a non-empty alpha list".into()));
    }
    let mut a = cfg.alphas.clone();
    a.sort_by(|x, y| x.total_cmp(y));
    a.dedup();
    Ok(a)
}

/// Per-alpha pipeline with merged tables. Sub-run failures are collected,
/// not propagated, so partial results survive.
pub fn sweep_alpha(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let alphas = sorted_alphas(cfg)?;
    let bench = Workbench::new(cfg)?;
    let mut failures = Vec::new();
    let fail = |stage: &str, alpha: Option<f64>, e: &Error| SweepFailure { stage: stage.into(), alpha, error: e.to_string() };

    let runs: Vec<(f64, u64, Result<EntropyReport>)> = alphas
        .par_iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let mut c = cfg.clone();
            c.alpha = alpha;
            c.seed = sweep_seed(cfg, k);
            (alpha, c.seed, entropy_run(&c, &bench))
        })
        .collect();
    let mut entropy = Vec::new();
    let mut rows = Vec::new();
    for (alpha, seed, r) in runs {
        match r {
            Ok(rep) => {
                match &rep.fit {
                    Some(f) => rows.push(PlateauRow {
                        alpha,
                        seed,
                        plateau: f.plateau,
                        plateau_se: f.plateau_se,
                        lambda: f.lambda,
                        lambda_ci: f.lambda_ci,
                    }),
                    None => failures.push(fail("entropy_fit", Some(alpha), &Error::Fit(rep.flags.join("; ")))),
                }
                entropy.push(rep);
            }
            Err(e) => failures.push(fail("entropy", Some(alpha), &e)),
        }
    }
    let plateau = match PlateauTable::from_rows(rows) {
        Ok(t) => Some(t),
        Err(e) => {
            failures.push(fail("plateau", None, &e));
            None
        }
    };

    let mut with_one = alphas.clone();
    if !with_one.contains(&1.0) {
        with_one.push(1.0);
    }
    let routes: Vec<RouteSpec> = match cfg.route {
        RouteChoice::Deterministic => vec![cfg.deterministic_route()],
        RouteChoice::Dsmc => vec![cfg.dsmc_route()],
        RouteChoice::Both => vec![cfg.deterministic_route(), cfg.dsmc_route()],
    };
    let mut limits = Vec::new();
    for route in &routes {
        match elastic_limit_curve(&with_one, route, bench.bath, &bench.constants, &bench.steady_options()) {
            Ok(t) => limits.push(t),
            Err(e) => failures.push(fail("limit_curve", None, &e)),
        }
    }

    let mut ops = Vec::new();
    for &alpha in &with_one {
        match bench.generator(alpha) {
            Ok((_, op)) => ops.push(op),
            Err(e) => failures.push(fail("generator", Some(alpha), &e)),
        }
    }
    let gaps = match alpha_drift(&ops).and_then(GapTable::new) {
        Ok(g) => Some(g),
        Err(e) => {
            failures.push(fail("drift", None, &e));
            None
        }
    };
    Ok(SweepReport { alphas, entropy, plateau, limits, gaps, failures })
}
