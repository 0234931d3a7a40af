//! Flat `key = value` experiment configuration.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; keys are `[a-z0-9_]+` and may appear once; lists and
//! vectors are comma separated. Unknown keys are errors. Every value is
//! range-checked by [`ExperimentConfig::validate`] before anything runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dsmc::{InitialDistribution, MixtureComponent};
use crate::error::{Error, Result};
use crate::kinetics::{BathMaxwellian, Velocity, WeightSpec};
use crate::steady::RouteSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Steady,
    Spectrum,
    Entropy,
    Sweep,
    Converge,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Simulate,
        ExperimentKind::Steady,
        ExperimentKind::Spectrum,
        ExperimentKind::Entropy,
        ExperimentKind::Sweep,
        ExperimentKind::Converge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Steady => "steady",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Entropy => "entropy",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Converge => "converge",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Relative energy change of the default perturbed start.
pub const DEFAULT_PERTURBATION: f64 = -0.2;

/// Initial datum of a particle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Explicit { distribution: InitialDistribution },
    /// Samples of the steady state, taken from a particle run burnt in from the bath.
    Steady,
    /// Steady samples with velocities about `u0` scaled by `sqrt(1 + perturbation)`.
    Perturbed { perturbation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteChoice {
    Deterministic,
    Dsmc,
    /// Both routes, cross-validated.
    Both,
}

/// Resolved configuration; serialized form is hashed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub u0: Velocity,
    pub theta0: f64,
    /// Weight exponent of the X/Y norms for particle distances.
    pub weight_a: f64,
    /// Weight exponent for the spectral operators.
    pub spectral_weight_a: f64,
    pub init: InitSpec,
    pub particles: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Steps between diagnostics snapshots.
    pub sample_every: u64,
    pub grid_n: usize,
    pub r_max: f64,
    pub tol: f64,
    pub march_dt: f64,
    pub route: RouteChoice,
    pub t_burn: f64,
    pub t_avg: f64,
    pub bins: usize,
    pub n_mc: usize,
    /// Allowed X distance between the two steady routes.
    pub cross_tol: f64,
    pub seed: u64,
    pub workers: usize,
    pub checkpoint_every: u64,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            alpha: 1.0,
            alphas: vec![0.8, 0.9, 0.95, 0.99],
            u0: Velocity::ZERO,
            theta0: 1.0,
            weight_a: 0.5,
            spectral_weight_a: 2.0,
            init: match experiment {
                ExperimentKind::Converge => InitSpec::Perturbed { perturbation: DEFAULT_PERTURBATION },
                _ => InitSpec::Explicit { distribution: InitialDistribution::maxwellian(2.0) },
            },
            particles: 100_000,
            dt: 0.005,
            t_final: 5.0,
            sample_every: 10,
            grid_n: 128,
            r_max: 10.0,
            tol: 1e-10,
            march_dt: 0.05,
            route: RouteChoice::Deterministic,
            t_burn: 10.0,
            t_avg: 20.0,
            bins: 32,
            n_mc: 50_000,
            cross_tol: 3e-2,
            seed: 0,
            workers: 1,
            checkpoint_every: 0,
            output: PathBuf::from("out"),
        }
    }

    pub fn bath(&self) -> Result<BathMaxwellian> {
        BathMaxwellian::new(self.u0, self.theta0)
    }

    pub fn weights(&self) -> Result<WeightSpec> {
        WeightSpec::new(self.weight_a)
    }

    pub fn spectral_weights(&self) -> Result<WeightSpec> {
        WeightSpec::new(self.spectral_weight_a)
    }

    /// Deterministic route settings taken from the grid keys.
    pub fn deterministic_route(&self) -> RouteSpec {
        RouteSpec::Deterministic { n: self.grid_n, r_max: self.r_max, dt: self.march_dt, tol: self.tol }
    }

    pub fn dsmc_route(&self) -> RouteSpec {
        RouteSpec::Dsmc { particles: self.particles, t_burn: self.t_burn, t_avg: self.t_avg, seed: self.seed, dt: self.dt }
    }

    /// Parses a configuration file, then applies `overrides` in order.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        Self::from_pairs(&pairs)
    }

    /// Builds from key-value pairs; `experiment` is required.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let kind: ExperimentKind = pairs
            .get("experiment")
            .ok_or_else(|| Error::Config("missing key 'experiment'".into()))?
            .parse()?;
        let mut c = Self::new(kind);
        let mut init_kind: Option<String> = None;
        let mut init_theta = 2.0;
        let mut init_u: Option<Velocity> = None;
        let mut init_radius = 1.0;
        let mut init_components: Option<Vec<MixtureComponent>> = None;
        let (mut init_theta_set, mut init_radius_set, mut perturbation_set) = (false, false, false);
        let mut perturbation = DEFAULT_PERTURBATION;
        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "experiment" => {}
                "alpha" => c.alpha = num(key, v)?,
                "alphas" => c.alphas = list(key, v)?,
                "u0" => c.u0 = vector(key, v)?,
                "theta0" => c.theta0 = num(key, v)?,
                "weight_a" => c.weight_a = num(key, v)?,
                "spectral_weight_a" => c.spectral_weight_a = num(key, v)?,
                "init" => init_kind = Some(v.to_string()),
                "init_theta" => {
                    init_theta = num(key, v)?;
                    init_theta_set = true;
                }
                "init_u" => init_u = Some(vector(key, v)?),
                "init_radius" => {
                    init_radius = num(key, v)?;
                    init_radius_set = true;
                }
                "init_components" => init_components = Some(components(key, v)?),
                "perturbation" => {
                    perturbation = num(key, v)?;
                    perturbation_set = true;
                }
                "particles" => c.particles = num(key, v)?,
                "dt" => c.dt = num(key, v)?,
                "t_final" => c.t_final = num(key, v)?,
                "sample_every" => c.sample_every = num(key, v)?,
                "grid_n" => c.grid_n = num(key, v)?,
                "r_max" => c.r_max = num(key, v)?,
                "tol" => c.tol = num(key, v)?,
                "march_dt" => c.march_dt = num(key, v)?,
                "route" => {
                    c.route = match v {
                        "deterministic" => RouteChoice::Deterministic,
                        "dsmc" => RouteChoice::Dsmc,
                        "both" => RouteChoice::Both,
                        _ => return Err(Error::Config(format!("route must be deterministic, dsmc or both, got '{v}'"))),
                    }
                }
                "t_burn" => c.t_burn = num(key, v)?,
                "t_avg" => c.t_avg = num(key, v)?,
                "bins" => c.bins = num(key, v)?,
                "n_mc" => c.n_mc = num(key, v)?,
                "cross_tol" => c.cross_tol = num(key, v)?,
                "seed" => c.seed = num(key, v)?,
                "workers" => c.workers = num(key, v)?,
                "checkpoint_every" => c.checkpoint_every = num(key, v)?,
                "output" => c.output = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            }
        }
        let u = init_u.unwrap_or(c.u0);
        let explicit_keys = init_theta_set || init_u.is_some() || init_radius_set || init_components.is_some();
        let init_kind = match init_kind {
            Some(k) => k,
            None if explicit_keys => "maxwellian".to_string(),
            None if perturbation_set => "perturbed".to_string(),
            None => return c.finish(),
        };
        c.init = match init_kind.as_str() {
            "maxwellian" => InitSpec::Explicit { distribution: InitialDistribution::Maxwellian { u, theta: init_theta } },
            "shell" => InitSpec::Explicit { distribution: InitialDistribution::Shell { center: u, radius: init_radius } },
            "ball" => InitSpec::Explicit { distribution: InitialDistribution::Ball { center: u, radius: init_radius } },
            "mixture" => InitSpec::Explicit {
                distribution: InitialDistribution::Mixture {
                    components: init_components
                        .ok_or_else(|| Error::Config("init = mixture needs init_components".into()))?,
                },
            },
            "steady" => InitSpec::Steady,
            "perturbed" => InitSpec::Perturbed { perturbation },
            other => return Err(Error::Config(format!("unknown init '{other}'"))),
        };
        c.finish()
    }

    fn finish(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Range checks; see the README for the documented ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let alpha_ok = |a: f64| a > 0.0 && a <= 1.0;
        if !alpha_ok(self.alpha) {
            return bad(format!("alpha = {} outside (0, 1]", self.alpha));
        }
        if self.experiment == ExperimentKind::Sweep && self.alphas.is_empty() {
            return bad("sweep needs a non-empty alpha list".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !alpha_ok(**a)) {
            return bad(format!("alpha list entry {a} outside (0, 1]"));
        }
        if !self.u0.is_finite() {
            return bad("u0 must be finite".into());
        }
        let pos = |name: &str, x: f64| -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {x} must be positive and finite")))
            }
        };
        pos("theta0", self.theta0)?;
        pos("weight_a", self.weight_a)?;
        pos("spectral_weight_a", self.spectral_weight_a)?;
        pos("dt", self.dt)?;
        pos("t_final", self.t_final)?;
        pos("tol", self.tol)?;
        pos("march_dt", self.march_dt)?;
        pos("t_burn", self.t_burn)?;
        pos("t_avg", self.t_avg)?;
        pos("cross_tol", self.cross_tol)?;
        if self.r_max < 4.0 * self.theta0.sqrt() || !self.r_max.is_finite() {
            return bad(format!("r_max = {} must be at least 4 sqrt(theta0)", self.r_max));
        }
        if !(2..=100_000_000).contains(&self.particles) {
            return bad(format!("particles = {} outside [2, 1e8]", self.particles));
        }
        if !(16..=1024).contains(&self.grid_n) {
            return bad(format!("grid_n = {} outside [16, 1024]", self.grid_n));
        }
        if !(4..=10_000).contains(&self.bins) {
            return bad(format!("bins = {} outside [4, 10000]", self.bins));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if self.n_mc < 100 {
            return bad("n_mc must be at least 100".into());
        }
        if !(1..=1024).contains(&self.workers) {
            return bad(format!("workers = {} outside [1, 1024]", self.workers));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return bad(format!("t_final = {} is not a multiple of dt = {}", self.t_final, self.dt));
        }
        match &self.init {
            InitSpec::Explicit { distribution } => distribution.validate().map_err(|e| Error::Config(e.to_string()))?,
            InitSpec::Perturbed { perturbation } => {
                if !(*perturbation > -1.0 && perturbation.is_finite()) {
                    return bad(format!("perturbation = {perturbation} must exceed -1"));
                }
            }
            InitSpec::Steady => {}
        }
        Ok(())
    }

    /// Canonical JSON; its SHA-256 identifies the run.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hash of the computation: the output directory and worker count are
    /// blanked because neither may change a result.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = 1;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }
}

/// Key-value pairs of a configuration text, without interpretation.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", k + 1)))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(Error::Config(format!("line {}: invalid key '{key}'", k + 1)));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", k + 1)));
        }
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn vector(key: &str, v: &str) -> Result<Velocity> {
    let xs = list(key, v)?;
    if xs.len() != 3 {
        return Err(Error::Config(format!("{key}: expected three components")));
    }
    Ok(Velocity::new(xs[0], xs[1], xs[2]))
}

/// `weight ux uy uz theta; ...`
fn components(key: &str, v: &str) -> Result<Vec<MixtureComponent>> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|c| {
            let xs: Vec<f64> = c.split_whitespace().map(|s| num(key, s)).collect::<Result<_>>()?;
            if xs.len() != 5 {
                return Err(Error::Config(format!("{key}: each component needs 'weight ux uy uz theta'")));
            }
            Ok(MixtureComponent { weight: xs[0], u: Velocity::new(xs[1], xs[2], xs[3]), theta: xs[4] })
        })
        .collect()
}
