use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn quadnls(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadnls"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("spawn quadnls")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: [&str; 4] = ["--set", "grid.n=3", "--set", "grid.num_nodes=512"];

#[test]
fn ground_state_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadnls(dir.path(), &[&["ground-state"], &SMALL[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("alpha1"));
    let v = json(&dir.path().join("ground_state.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "ground-state");
    assert_eq!(v["config"]["grid"]["n"], 3);
    let alpha1 = v["result"]["ground_state"]["alpha1"].as_f64().unwrap();
    let c_op = v["result"]["sharp_constant"]["c_op"].as_f64().unwrap();
    assert!((alpha1 * c_op - 1.0).abs() < 1e-6);
    let csv = fs::read_to_string(dir.path().join("ground_state.csv")).unwrap();
    assert!(csv.lines().count() > 512);
    assert!(!dir.path().join("plot_ground_state.py").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [&["ground-state"], &SMALL[..]].concat();
    assert!(quadnls(dir.path(), &args).status.success());
    let first: Vec<Vec<u8>> = ["ground_state.json", "ground_state.csv"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    assert!(quadnls(dir.path(), &args).status.success());
    for (f, before) in ["ground_state.json", "ground_state.csv"].iter().zip(first) {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            before,
            "{f} changed between runs"
        );
    }
}

#[test]
fn dimension_six_and_above_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["6", "7"] {
        let o = quadnls(dir.path(), &["ground-state", "--set", &format!("grid.n={n}")]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("n <= 5"), "{}", stderr(&o));
    }
}

#[test]
fn schema_violations_exit_two_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"grid": {"n": 5, "num_nodes": "many"}}"#).unwrap();
    let o = quadnls(dir.path(), &["ground-state", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.num_nodes"), "{}", stderr(&o));

    fs::write(&bad, r#"{"grid": {"nodes": 5}}"#).unwrap();
    let o = quadnls(dir.path(), &["ground-state", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = quadnls(dir.path(), &["ground-state", "--set", "system.kappa=-1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = quadnls(dir.path(), &["dichotomy", "--set", "grid.n=4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_invariant_exits_one_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadnls(
        dir.path(),
        &[&["ground-state"], &SMALL[..], &["--set", "solver.tol_pde=1e-12"]].concat(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("elliptic_residual"), "{}", stderr(&o));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
  "grid": {"n": 5, "num_nodes": 512},
  "evolve": {"t_max": 0.02, "dt": 0.002},
  "experiment": {"family": "gaussian", "parameters": {"amplitude_u": 0.5, "amplitude_v": 0.5, "width": 1.5}, "evolve_num_nodes": 512},
  "output": {"emit_plot_scripts": true}
}"#,
    )
    .unwrap();
    let o = quadnls(
        dir.path(),
        &[
            "evolve",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "evolve.scheme=midpoint",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("evolve.json"));
    assert_eq!(v["result"]["evolve"]["scheme"], "midpoint");
    assert_eq!(v["result"]["detection"]["verdict"], "BOUNDED");
    assert_eq!(v["result"]["trajectory_csv"], "trajectory.csv");
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,Q,E,K,P,V"));
    assert_eq!(csv.lines().count(), 1 + 11);
    assert!(dir.path().join("plot_trajectory.py").exists());
}

#[test]
fn dichotomy_below_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadnls(
        dir.path(),
        &[
            "dichotomy",
            "--set",
            "grid.num_nodes=512",
            "--set",
            "experiment.parameters.scale_factor=0.9",
            "--set",
            "experiment.evolve_num_nodes=1024",
            "--set",
            "evolve.t_max=0.05",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("dichotomy.json"));
    let r = &v["result"];
    assert_eq!(r["classification"], "GLOBAL");
    assert_eq!(r["simulation"]["verdict"], "BOUNDED");
    assert_eq!(r["consistency"], "AGREE");
    assert_eq!(r["simulation"]["trajectory_csv"], "trajectory.csv");
    assert!((r["KQ_ratio"].as_f64().unwrap() - 0.6561).abs() < 1e-6);
    assert!(stdout(&o).contains("GLOBAL + BOUNDED (AGREE)"));
}

#[test]
fn verify_defaults_pass_and_list_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadnls(dir.path(), &["verify", "--set", "verify.t_max=0.1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for check in [
        "pohozaev_residual",
        "elliptic_residual",
        "scaling_identities",
        "gagliardo_nirenberg_violation",
        "threshold_routes",
        "csv_round_trip",
        "charge_drift",
        "energy_drift",
        "virial_identity",
        "localized_virial",
    ] {
        assert!(
            out.lines().any(|l| l.starts_with("PASS") && l.contains(check)),
            "{check} missing:\n{out}"
        );
    }
    let v = json(&dir.path().join("verify.json"));
    assert_eq!(v["result"]["passed"], true);
}
