//! `inelastic`: runs the workbench experiments from a config file plus flags.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use inelastic_core::experiment::config::parse_pairs;
use inelastic_core::experiment::{exit_code, rerun_from_manifest, run_experiment, ExperimentConfig, ExperimentKind};
use inelastic_core::Error;

#[derive(Parser)]
#[command(name = "inelastic", version, about = "Inelastic hard spheres in a thermal bath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle run; writes the energy/momentum series and a final checkpoint.
    Simulate(RunArgs),
    /// Steady state by deterministic marching, particles, or both.
    Steady(RunArgs),
    /// Spectrum, zero mode, decay fit and dissipativity of the linearized generator.
    Spectrum(RunArgs),
    /// Relative entropy, entropy production and the entropy balance along a run.
    Entropy(RunArgs),
    /// Entropy plateaus, elastic-limit curve and generator drift over an alpha list.
    Sweep(RunArgs),
    /// Relaxation towards the steady state and its rate against the spectral gap.
    Converge(RunArgs),
    /// Parses and validates a config file; prints the resolved configuration.
    ValidateConfig(RunArgs),
    /// Re-runs the configuration recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` lines).
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated alpha list for sweeps.
    #[arg(long)]
    alphas: Option<String>,
    /// Particle count.
    #[arg(long = "n")]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    r_max: Option<f64>,
    /// deterministic, dsmc or both.
    #[arg(long)]
    route: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Any config key: `--set key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.into(), v));
            }
        };
        put("alpha", self.alpha.map(|x| x.to_string()));
        put("alphas", self.alphas.clone());
        put("particles", self.particles.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("dt", self.dt.map(|x| x.to_string()));
        put("t_final", self.t_final.map(|x| x.to_string()));
        put("grid_n", self.grid_n.map(|x| x.to_string()));
        put("r_max", self.r_max.map(|x| x.to_string()));
        put("route", self.route.clone());
        put("workers", self.workers.map(|x| x.to_string()));
        put("output", self.output.as_ref().map(|p| p.display().to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{s}'")))?;
            o.push((k.trim().into(), v.trim().into()));
        }
        Ok(o)
    }

    /// Resolves the file plus flags; `kind` is forced by the subcommand.
    fn resolve(&self, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Error> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut overrides = self.overrides()?;
        if let Some(kind) = kind {
            if let Some(found) = parse_pairs(&text)?.get("experiment") {
                if found != kind.name() {
                    return Err(Error::Config(format!("config file is for '{found}', not '{kind}'")));
                }
            }
            overrides.push(("experiment".into(), kind.name().into()));
        }
        ExperimentConfig::parse(&text, &overrides)
    }
}

fn execute(cli: Cli) -> i32 {
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::Steady(a) => (ExperimentKind::Steady, a),
        Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
        Command::Entropy(a) => (ExperimentKind::Entropy, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Converge(a) => (ExperimentKind::Converge, a),
        Command::ValidateConfig(a) => {
            return match a.resolve(None) {
                Ok(cfg) => {
                    println!("{}", cfg.to_json().unwrap_or_default());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            };
        }
        Command::Rerun { manifest, output, workers } => return report(rerun_from_manifest(&manifest, &output, workers)),
    };
    let cfg = match args.resolve(Some(kind)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let inputs: Vec<PathBuf> = args.config.iter().cloned().collect();
    report(run_experiment(&cfg, &inputs))
}

fn report(result: inelastic_core::Result<inelastic_core::experiment::RunOutcome>) -> i32 {
    let code = exit_code(&result);
    match &result {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o.summary).unwrap_or_default());
            if let Some(e) = &o.summary.error {
                eprintln!("error: {e}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(execute(cli) as u8)
}
