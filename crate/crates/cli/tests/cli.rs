//! End-to-end tests of the `aoi-pg` binary: exit codes, artifact layout,
//! overwrite safety, and reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aoi-pg"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    binary()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary launches")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_run_config(dir: &Path) -> String {
    write_config(
        dir,
        "run.json",
        r#"{
            "channel": {"kind": "gilbert_elliot", "p": 0.1, "q": 0.9, "y0": 1.0, "y1": 10.0},
            "cost": {"kind": "penalty", "penalty": {"kind": "identity"}, "transmission_cost": 4.0},
            "agent": {"algorithm": "discard"},
            "sim": {"horizon": 500.0, "replications": 2, "master_seed": 7}
        }"#,
    )
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["run", "--config", "nope/absent.json"]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("absent.json"));
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        r#"{
            "channel": {"kind": "lognormal", "rho_label": 0.5},
            "cost": {"kind": "penalty", "penalty": {"kind": "identity"}},
            "agent": {"algorithm": "wait"},
            "sim": {"horizon": 10.0, "replications": 1}
        }"#,
    );
    let output = run_in(dir.path(), &["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("rho_label"), "stderr: {}", stderr_of(&output));
}

#[test]
fn invalid_field_value_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad_value.json",
        r#"{
            "channel": {"kind": "lognormal"},
            "cost": {"kind": "penalty", "penalty": {"kind": "identity"}},
            "agent": {"algorithm": "wait", "sigma": -1.0},
            "sim": {"horizon": 10.0, "replications": 1}
        }"#,
    );
    let output = run_in(dir.path(), &["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("sigma"), "stderr: {}", stderr_of(&output));
}

#[test]
fn run_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config(dir.path());
    let output = run_in(
        dir.path(),
        &["run", "--config", &config, "--out", "artifacts", "--jobs", "2", "--emit-plots"],
    );
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("final beta"));

    let out = dir.path().join("artifacts");
    for name in [
        "runs.csv",
        "policy.csv",
        "policy_empirical.csv",
        "summary.csv",
        "config.resolved.json",
        "beta_vs_time.gp",
        "policy.gp",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert!(runs.starts_with("run_id,step,time,beta_hat"));
    let policy = fs::read_to_string(out.join("policy.csv")).unwrap();
    assert!(policy.starts_with("run_id,y,mu,mean_action,kind"));

    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["agent"]["z_max"], serde_json::json!(10.0));
    assert_eq!(resolved["sim"]["master_seed"], serde_json::json!(7));
}

#[test]
fn seed_override_is_reproducible_and_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config(dir.path());
    for (out, seed) in [("a", "99"), ("b", "99"), ("c", "100")] {
        let output =
            run_in(dir.path(), &["run", "--config", &config, "--seed", seed, "--out", out]);
        assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    }
    let bytes = |name: &str| fs::read(dir.path().join(name).join("runs.csv")).unwrap();
    assert_eq!(bytes("a"), bytes("b"), "same seed must reproduce byte-identical runs");
    assert_ne!(bytes("a"), bytes("c"), "different seeds must differ");
}

#[test]
fn refuses_to_overwrite_outputs_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run_config(dir.path());
    let first = run_in(dir.path(), &["run", "--config", &config, "--out", "keep"]);
    assert_eq!(first.status.code(), Some(0));
    let second = run_in(dir.path(), &["run", "--config", &config, "--out", "keep"]);
    assert_eq!(second.status.code(), Some(2));
    assert!(stderr_of(&second).contains("--force"));
    let forced =
        run_in(dir.path(), &["run", "--config", &config, "--out", "keep", "--force"]);
    assert_eq!(forced.status.code(), Some(0), "stderr: {}", stderr_of(&forced));
    assert!(dir.path().join("keep").join("runs.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep.json",
        r#"{
            "channel": {"kind": "gilbert_elliot", "p": 0.1, "q": 0.9, "y0": 1.0, "y1": 10.0},
            "cost": {"kind": "penalty", "penalty": {"kind": "identity"}, "transmission_cost": 1.0},
            "agent": {"algorithm": "wait"},
            "sim": {"horizon": 300.0, "replications": 2, "master_seed": 3},
            "sweep": {"axis": "transmission_cost", "values": [0.5, 1.0, 2.0]}
        }"#,
    );
    let output =
        run_in(dir.path(), &["sweep", "--config", &config, "--out", "sw", "--emit-plots"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let text = fs::read_to_string(dir.path().join("sw").join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines.len(), 4, "header plus three rows: {text}");
    assert!(lines[0].starts_with("axis,value,final_beta_mean,final_beta_std"));
    assert!(dir.path().join("sw").join("sweep.gp").exists());
}

#[test]
fn sweep_without_values_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sweep_empty.json",
        r#"{
            "channel": {"kind": "lognormal"},
            "cost": {"kind": "penalty", "penalty": {"kind": "identity"}},
            "agent": {"algorithm": "wait"},
            "sim": {"horizon": 100.0, "replications": 1},
            "sweep": {"axis": "rho", "values": []}
        }"#,
    );
    let output = run_in(dir.path(), &["sweep", "--config", &config]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
}

#[test]
fn wait_oracle_solves_the_degenerate_problem() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "wait_oracle.json",
        r#"{"p": 0.5, "q": 0.5, "y0": 1.0, "y1": 1.0, "transmission_cost": 1.0,
            "z_max": 2.0, "penalty": {"kind": "identity"}}"#,
    );
    let output = run_in(dir.path(), &["oracle", "ge-wait", "--config", &config, "--out", "o"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("0.4142"), "stdout: {stdout}");
    assert!(stdout.contains("2.4142"), "stdout: {stdout}");
    let csv_text = fs::read_to_string(dir.path().join("o").join("oracle.csv")).unwrap();
    assert!(csv_text.starts_with("z0,z1,beta"));
}

#[test]
fn discard_oracle_reports_an_interior_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "discard_oracle.json",
        r#"{"p": 0.1, "q": 0.9, "y0": 1.0, "y1": 10.0, "transmission_cost": 4.0,
            "x_min": 2.0, "x_max": 10.0}"#,
    );
    let output =
        run_in(dir.path(), &["oracle", "ge-discard", "--config", &config, "--out", "o"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    let x0: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("x0 = "))
        .expect("x0 line")
        .trim()
        .parse()
        .unwrap();
    let beta: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("beta = "))
        .expect("beta line")
        .trim()
        .parse()
        .unwrap();
    assert!((x0 - 2.79).abs() < 0.05, "x0 {x0}");
    assert!((beta - 5.41).abs() < 0.05, "beta {beta}");
}

#[test]
fn divergent_updates_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "divergent.json",
        r#"{
            "channel": {"kind": "lognormal", "sigma_d": 1.5},
            "cost": {"kind": "penalty", "penalty": {"kind": "exponential", "rate": 50.0}},
            "agent": {"algorithm": "wait"},
            "sim": {"horizon": 5000.0, "replications": 1, "master_seed": 13}
        }"#,
    );
    let output = run_in(dir.path(), &["run", "--config", &config, "--out", "d"]);
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr_of(&output));
    assert!(!dir.path().join("d").exists(), "no partial outputs on abort");
}

#[test]
fn self_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["check"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("all checks passed"));
}
