use std::path::Path;
use std::process::{Command, Output};

use collab::config::{canonical_hash, parse_config, schema_errors, MANIFEST_SCHEMA, SUMMARY_SCHEMA};
use collab::error::CliError;
use collab::output::{read_survival_csv, OutputDir};
use serde_json::{json, Value};

fn collab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collab")).args(args).output().expect("binary runs")
}

fn small_config(run: Value) -> Value {
    json!({
        "map": {"kind": "mod_beta", "beta": 5},
        "scheme": {
            "dimension": 1,
            "side": 3,
            "centers": {"+1": "1/2", "-1": "1/4"},
            "epsilon": "1/20",
            "delta": "1/40",
            "mode": "isolated_neighborhood"
        },
        "run": run
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn example_runs_without_config_and_exits_zero() {
    let out = collab(&["example"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("624/625"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn unknown_config_key_is_a_schema_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(json!({}));
    cfg["run"]["trajectories"] = json!(10);
    let path = write(dir.path(), "bad.json", &cfg);
    let out = collab(&["simulate-survival", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_literal_and_missing_file_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(json!({}));
    cfg["scheme"]["delta"] = json!("one half");
    let path = write(dir.path(), "bad.json", &cfg);
    let o = dir.path().join("o");
    assert_eq!(collab(&["count", "--config", &path, "--out", o.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("none.json");
    assert_eq!(collab(&["count", "--config", missing.to_str().unwrap(), "--out", o.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_output_and_zero_workers_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &small_config(json!({})));
    assert_eq!(collab(&["theta", "--config", &path]).status.code(), Some(2));
    assert_eq!(collab(&["example", "--workers", "0"]).status.code(), Some(2));
    assert_eq!(collab(&["no-such-subcommand"]).status.code(), Some(2));
}

#[test]
fn zones_outside_the_interval_are_rejected_at_load() {
    let mut cfg = small_config(json!({}));
    cfg["scheme"]["centers"]["+1"] = json!("1/100");
    cfg["scheme"]["epsilon"] = json!("1/10");
    let loaded = parse_config(&cfg.to_string()).unwrap();
    assert!(matches!(loaded.config.lattice(), Err(CliError::Schema(_))));
}

#[test]
fn runtime_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // fewer trajectories than the survival estimator accepts
    let path = write(dir.path(), "c.json", &small_config(json!({"n_traj": 1, "horizon": 10})));
    let out = collab(&["simulate-survival", "--config", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn failed_assertion_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    // estimated densities give a floating-point theta, so the exact-rational check fails
    let density = json!({"kind": "estimated", "n": 16, "samples_per_cell": 4, "seed": 1});
    let path = write(dir.path(), "c.json", &small_config(json!({"density": density, "k_max": 20})));
    let o = dir.path().join("o");
    let out = collab(&["example", "--config", &path, "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] theta = 1 - 5^-4"));
    assert!(o.join("manifest.json").exists());
}

#[test]
fn outputs_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = json!({"n_traj": 2000, "horizon": 300, "deltas": [0.05, 0.025], "grid_sizes": [16], "seed": 9});
    let path = write(dir.path(), "c.json", &small_config(run));
    let mut manifests = Vec::new();
    for w in ["1", "3"] {
        let o = dir.path().join(format!("w{w}"));
        let out = collab(&["simulate-survival", "--config", &path, "--out", o.to_str().unwrap(), "--workers", w]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        manifests.push(read_json(&o.join("manifest.json")));
    }
    assert_eq!(manifests[0]["files"], manifests[1]["files"]);
    assert_eq!(manifests[0]["workers"], json!(1));
    assert_eq!(manifests[1]["workers"], json!(3));
}

#[test]
fn workers_fall_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = Command::new(env!("CARGO_BIN_EXE_collab"))
        .args(["example", "--out", o.to_str().unwrap()])
        .env("COLLAB_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_json(&o.join("manifest.json"))["workers"], json!(2));
}

#[test]
fn seed_flag_changes_outputs_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &small_config(json!({"n_traj": 1000, "horizon": 100, "grid_sizes": [8]})));
    let mut files = Vec::new();
    for seed in ["1", "2"] {
        let o = dir.path().join(seed);
        let out = collab(&["simulate-survival", "--config", &path, "--out", o.to_str().unwrap(), "--seed", seed]);
        assert_eq!(out.status.code(), Some(0));
        let m = read_json(&o.join("manifest.json"));
        assert_eq!(m["master_seed"], json!(seed.parse::<u64>().unwrap()));
        files.push(m["files"][0].clone());
    }
    assert_ne!(files[0]["sha256"], files[1]["sha256"]);
}

#[test]
fn config_hash_ignores_key_order_and_whitespace() {
    let a = r#"{"map":{"kind":"mod_beta","beta":5},"scheme":{"dimension":1,"side":3,"centers":{"+1":"1/2","-1":"1/4"},"epsilon":"1/20","delta":"1/40"}}"#;
    let b = r#"{ "scheme": { "delta": "1/40", "epsilon": "1/20", "centers": { "-1": "1/4", "+1": "1/2" }, "side": 3, "dimension": 1 },
                 "map": { "beta": 5, "kind": "mod_beta" } }"#;
    let (ha, hb) = (parse_config(a).unwrap().hash, parse_config(b).unwrap().hash);
    assert_eq!(ha, hb);
    assert_eq!(ha.len(), 64);
    let c = a.replace("1/40", "1/50");
    assert_ne!(parse_config(&c).unwrap().hash, ha);
    assert_eq!(canonical_hash(&json!({"b": 1, "a": [2, {"d": 3, "c": 4}]})), canonical_hash(&json!({"a": [2, {"c": 4, "d": 3}], "b": 1})));
}

#[test]
fn hitting_csv_with_no_samples_has_only_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut out = OutputDir::create(Some(dir.path())).unwrap();
    out.write_csv("hitting_0.csv", &["trajectory", "t_hit", "censored"], Vec::<Vec<String>>::new()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("hitting_0.csv")).unwrap(), "trajectory,t_hit,censored\n");
}

#[test]
fn survival_csv_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &small_config(json!({"n_traj": 1000, "horizon": 80, "grid_sizes": [8]})));
    let o = dir.path().join("o");
    assert_eq!(collab(&["simulate-survival", "--config", &path, "--out", o.to_str().unwrap()]).status.code(), Some(0));
    let (n, f, s) = read_survival_csv(&o.join("survival_0.csv")).unwrap();
    assert_eq!(n, (0..=80).collect::<Vec<u64>>());
    let summary = read_json(&o.join("summary.json"));
    assert_eq!(summary["results"]["curves"][0]["fraction_at_0"].as_f64().unwrap(), f[0]);
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
    assert!(s.iter().all(|x| x.is_finite() && *x >= 0.0));
}

#[test]
fn every_subcommand_writes_schema_valid_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = json!({
        "n_traj": 1000, "horizon": 400, "t": 1.0, "grid_sizes": [12], "replicates": 2,
        "deltas": [0.05, 0.025], "bootstrap": 10, "k_max": 20, "density_dump": true, "event_log_steps": 50
    });
    let path = write(dir.path(), "c.json", &small_config(run));
    for sub in ["simulate-survival", "hitting-law", "count", "ulam", "theta", "example", "selfcheck"] {
        let o = dir.path().join(sub);
        let out = collab(&[sub, "--config", &path, "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        let summary = read_json(&o.join("summary.json"));
        assert!(schema_errors(SUMMARY_SCHEMA, &summary).is_empty(), "{sub}");
        assert_eq!(summary["kind"], json!(sub));
        let manifest = read_json(&o.join("manifest.json"));
        assert!(schema_errors(MANIFEST_SCHEMA, &manifest).is_empty(), "{sub}");
        assert_eq!(manifest["config_hash"], summary["config_hash"]);
        for f in manifest["files"].as_array().unwrap() {
            let bytes = std::fs::read(o.join(f["path"].as_str().unwrap())).unwrap();
            assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        }
        assert!(!manifest["provenance"].as_array().unwrap().is_empty(), "{sub}");
    }
}

#[test]
fn disabled_mode_gives_flat_survival() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "c.json",
        &small_config(json!({"n_traj": 1000, "horizon": 50, "mode": "disabled", "grid_sizes": [8]})),
    );
    let o = dir.path().join("o");
    assert_eq!(collab(&["simulate-survival", "--config", &path, "--out", o.to_str().unwrap()]).status.code(), Some(0));
    let (_, f, _) = read_survival_csv(&o.join("survival_0.csv")).unwrap();
    assert!(f.iter().all(|&x| x == 1.0));
}
