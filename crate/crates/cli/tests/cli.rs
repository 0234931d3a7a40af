use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn inelastic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inelastic")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn validate_config_accepts_a_good_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.cfg");
    fs::write(&good, "experiment = entropy\nalpha = 0.9  # inelastic\nparticles = 5000\n").unwrap();
    let o = inelastic(&["validate-config", good.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(echo["alpha"], 0.9);
    assert_eq!(echo["particles"], 5000);
}

#[test]
fn validate_config_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    for (k, text) in ["experiment = entropy\nalpha = 1.5\n", "experiment = entropy\nbogus = 1\n", "experiment = sweep\nalphas =\n"]
        .iter()
        .enumerate()
    {
        let p = dir.path().join(format!("bad{k}.cfg"));
        fs::write(&p, text).unwrap();
        let o = inelastic(&["validate-config", p.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{text}");
    }
}

#[test]
fn unknown_flag_prints_usage_and_exits_two() {
    let o = inelastic(&["simulate", "--frobnicate", "3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&inelastic(&["bogus-command"])), 2);
    assert_eq!(code(&inelastic(&["--help"])), 0);
}

#[test]
fn mismatched_experiment_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.cfg");
    fs::write(&p, "experiment = entropy\n").unwrap();
    assert_eq!(code(&inelastic(&["simulate", p.to_str().unwrap()])), 2);
}

#[test]
fn converge_writes_outputs_and_repeats_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = inelastic(&["converge", "--alpha", "1.0", "--n", "20000", "--seed", "7", "-o", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    for f in ["manifest.json", "converge.csv", "summary.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "converge");
    assert_eq!(summary["manifest_ref"], "manifest.json");
    assert!(summary["fitted"]["nu_hat"].as_f64().unwrap() > 0.0);
    assert!(summary["flags"].is_array());
    let b = run("b");
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn rerun_reproduces_a_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    fs::write(&cfg, "experiment = simulate\nalpha = 0.7\nparticles = 3000\nt_final = 0.5\ndt = 0.01\n").unwrap();
    let a = dir.path().join("a");
    let o = inelastic(&["simulate", cfg.to_str().unwrap(), "-o", a.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["path"], cfg.to_str().unwrap());
    let b = dir.path().join("b");
    let o = inelastic(&["rerun", a.join("manifest.json").to_str().unwrap(), "-o", b.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = inelastic(&[
        "simulate", "--n", "2000", "--dt", "0.05", "--t-final", "0.5", "--set", "init_theta=40", "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "numerical_failure");
}
