//! Binary-level contract: exit codes, error channels, artifacts, and the
//! reproduce-from-echoed-config round trip.

use std::path::Path;
use std::process::{Command, Output};

fn gexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gexp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

const GOOD: &str = r#"
[domain]
kind = "scalar_interval"
a_low = 0.04
a_high = 0.25

[distribution]
kind = "rademacher"
d = 1

[payoff]
family = "terminal_call"

[solver]
n = 3
control_resolution = 4

[simulation]
paths = 500
seed = 5
"#;

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(gexp(&["--help"]).status.code(), Some(0));
    assert_eq!(gexp(&["--version"]).status.code(), Some(0));
    assert_eq!(gexp(&["solve", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    write(&path, &format!("{GOOD}\n[solver2]\nn = 3\n"));
    let out = gexp(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("solver2"), "stderr names the offending key: {err}");
    assert!(out.stdout.is_empty(), "errors go to stderr only");
}

#[test]
fn missing_required_pieces_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("incomplete.toml");
    write(&path, "[domain]\nkind = \"scalar_interval\"\na_low = 0.04\na_high = 0.25\n");
    // No payoff/distribution/n.
    assert_eq!(
        gexp(&["solve", "--config", path.to_str().unwrap()]).status.code(),
        Some(1)
    );
    // Simulate without a policy file.
    let full = dir.path().join("full.toml");
    write(&full, GOOD);
    assert_eq!(
        gexp(&["simulate", "--config", full.to_str().unwrap()]).status.code(),
        Some(1)
    );
    // Converge without n_values.
    assert_eq!(
        gexp(&["converge", "--config", full.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn failing_law_reports_rather_than_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skew.toml");
    write(
        &path,
        r#"
[distribution]
kind = "finite_support"
atoms = [{ point = [1.0], prob = 0.75 }, { point = [-1.0], prob = 0.25 }]
"#,
    );
    let out = gexp(&["validate-dist", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["result"]["pass"], serde_json::Value::Bool(false));
}

#[test]
fn csv_artifact_is_written_alongside_json_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("conv.toml");
    write(
        &config,
        &format!("{GOOD}\n[converge]\nn_values = [2, 4]\noracle = 0.19947114020071635\ncontrol_resolution = 4\n"),
    );
    let artifact = dir.path().join("table.csv");
    let out = gexp(&[
        "converge",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        artifact.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0));
    // stdout stays JSON regardless of the artifact format.
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["command"], "converge");
    let csv = std::fs::read_to_string(&artifact).unwrap();
    assert!(csv.lines().next().unwrap().contains("n"), "csv has a header: {csv}");
    assert_eq!(csv.lines().count(), 3, "header plus one row per n");
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    write(&config, GOOD);
    let first = gexp(&["solve", "--config", config.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(first.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();

    // Re-emit the echoed config as TOML and run from it.
    let echoed: toml::Value = serde_json::from_value(json["config"].clone()).unwrap();
    let replay = dir.path().join("replay.toml");
    write(&replay, &toml::to_string(&echoed).unwrap());
    let second = gexp(&["solve", "--config", replay.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout, "echoed config round-trips byte-identically");
}
