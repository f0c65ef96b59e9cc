//! The `reduction-lab` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_reduction-lab");

const QUBIT: &str = r#"
n_paths = 200
seed = 11
mode = "closed-form"
checks = ["born", "martingales"]
record_stride = 10

[hamiltonian]
eigenvalues = [0.0, 1.0]

[rho0]
re = [0.5, 0.25, 0.25, 0.5]

[grid]
t_max = 60.0
dt = 0.05
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("REDUCTION_LAB_THREADS", t),
        None => cmd.env_remove("REDUCTION_LAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_trajectory_with_exact_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "sde"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("trajectory_sde.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,H_t,V_t,purity,xi,W,pi_1,pi_2,|R_1_2|");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 9);
    assert_eq!(first[0], "0.0000000000000000e0");
    assert_eq!(first[1], "5.0000000000000000e-1");
    assert_eq!(text.lines().count(), 1 + 1201);
}

#[test]
fn both_mode_writes_two_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--mode", "both"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("trajectory_closed_form.csv").exists());
    assert!(dir.path().join("trajectory_sde.csv").exists());
}

#[test]
fn ensemble_exit_code_follows_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("pass");
    let o = run(&["ensemble", "--config", cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_passed"], true);
    assert_eq!(summary["seed"], 11);
    assert_eq!(summary["config"]["n_paths"], 200);
    assert!(out.join("series_closed_form.csv").exists());

    // By t = 2 the mean variance is far from collapsed.
    let short = write_config(dir.path(), &QUBIT.replace("t_max = 60.0", "t_max = 2.0"));
    let out = dir.path().join("fail");
    let o = run(&["ensemble", "--config", short.to_str().unwrap(), "--out", out.to_str().unwrap(), "--checks", "variance"], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"][0]["check"], "variance");
    assert_eq!(summary["verdicts"][0]["passed"], false);
}

#[test]
fn ensemble_outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let mut outputs = Vec::new();
    let out = dir.path().join("out");
    for threads in ["1", "3", "8"] {
        let o = run(
            &["ensemble", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5", "--paths", "300"],
            Some(threads),
        );
        assert!(o.status.code().is_some());
        let summary = fs::read(out.join("summary.json")).unwrap();
        let series = fs::read(out.join("series_closed_form.csv")).unwrap();
        outputs.push((summary, series));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let summary: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["n_paths"], 300);
}

#[test]
fn verify_prints_a_verdict_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let o = run(&["verify", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["claim", "measured", "threshold", "verdict"]);
    assert_eq!(text.lines().filter(|l| l.ends_with("PASS")).count(), 2);

    let short = write_config(dir.path(), &QUBIT.replace("t_max = 60.0", "t_max = 2.0"));
    let o = run(&["verify", "--config", short.to_str().unwrap(), "--checks", "variance"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("variance") && l.ends_with("FAIL")));
}

#[test]
fn verify_runs_selected_acceptance_criteria() {
    let o = run(&["verify", "--checks", "8"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("8.") && l.ends_with("PASS")));
    let o = run(&["verify", "--checks", "11"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lindblad_writes_mean_state_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUBIT);
    let o = run(&["lindblad", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("lindblad.csv")).unwrap();
    assert!(text.starts_with("t,H_t,V_t,purity,pi_1,pi_2,|R_1_2|,rho_re_1_1,"));
}

#[test]
fn config_errors_name_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &QUBIT.replace("seed = 11", "seed = 11\nspeed = 3"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("speed"), "{err}");

    let cfg = write_config(dir.path(), &QUBIT.replace("re = [0.5, 0.25, 0.25, 0.5]", "re = [0.5, 0.9, 0.25, 0.5]"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho0"), "{}", stderr(&o));

    let o = run(&["simulate", "--config", dir.path().join("missing.toml").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let o = run(&["simulate", "--config", "x.toml", "--mode", "exact"], None);
    assert_eq!(o.status.code(), Some(2));
}
