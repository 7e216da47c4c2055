//! Helpers for driving the binary in integration tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_betapanel"))
}

pub fn run_ok(args: &[&str], cwd: &Path) -> Output {
    let out = bin().args(args).current_dir(cwd).output().expect("spawn betapanel");
    assert!(
        out.status.success(),
        "command {:?} failed with {:?}\nstdout: {}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(args: &[&str], cwd: &Path) -> i32 {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn betapanel")
        .status
        .code()
        .expect("exit code")
}

pub fn write(path: &Path, content: &str) {
    std::fs::write(path, content).expect("write test input");
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

pub fn scenario_json() -> &'static str {
    r#"{
  "levels": 2,
  "years": 3,
  "schools_per_level": [12, 12],
  "variant": "M5",
  "family": "beta",
  "mean_covariates": [
    {"name": "adm", "kind": "binary", "prob": 0.25},
    {"name": "hdi", "kind": "std_normal"}
  ],
  "precision_covariates": [
    {"name": "nstudent", "kind": "log_normal_std"}
  ],
  "alpha_start": [-0.8, 0.6, 0.4],
  "gamma_start": [-3.0, -0.3],
  "w_alpha": [0.01, 0.01, 0.01],
  "w_gamma": [0.01, 0.01],
  "v_beta": [[0.05, 0.05, 0.05], [0.05, 0.05, 0.05]],
  "v_delta": [[0.05, 0.05], [0.05, 0.05]],
  "seed": 21
}"#
}

pub fn m5_spec_json() -> &'static str {
    r#"{
  "variant": "M5",
  "family": "beta",
  "mean_covariates": [
    {"name": "adm"},
    {"name": "hdi"}
  ],
  "precision_covariates": [{"name": "nstudent"}]
}"#
}

pub fn sampler_json(chains: u32) -> String {
    format!(
        r#"{{"iterations": 700, "burn_in": 300, "thin": 4, "seed": 5, "chains": {chains}}}"#
    )
}

/// Prepare a temp workspace holding scenario/spec/sampler inputs plus a
/// simulated panel under `sim/`.
pub fn simulated_workspace(chains: u32) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path().to_path_buf();
    write(&root.join("scenario.json"), scenario_json());
    write(&root.join("m5.json"), m5_spec_json());
    write(&root.join("sampler.json"), &sampler_json(chains));
    run_ok(
        &["simulate", "--scenario", "scenario.json", "--out", "sim"],
        &root,
    );
    (dir, root)
}
