//! End-to-end runs of the `qcmi` binary.

use std::process::{Command, Output};

fn qcmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcmi")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

#[test]
fn lemmas_report_four_checks() {
    let out = qcmi(&["lemmas", "--trials", "20", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["results"].as_array().unwrap().len(), 4);
    assert_eq!(v["schema_version"], 1);
    let anchors: Vec<&str> = v["assertions"].as_array().unwrap().iter().map(|a| a["anchor"].as_str().unwrap()).collect();
    assert_eq!(anchors, ["Lemma 4.1", "Lemma 4.2", "Lemma 4.3", "Lemma 4.6"]);
}

#[test]
fn attack_report_has_key_match() {
    let out = qcmi(&["attack", "--protocol", "toy-qpke", "--t", "4", "--reps", "24", "--eps", "0.05", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let k = v["results"]["key_match_prob"].as_f64().unwrap();
    assert!((0.8..=1.0).contains(&k));
}

#[test]
fn walk_f_bound_csv_has_max_ratio() {
    let out = qcmi(&["walk", "--f-bound", "--t", "2..64", "--p-grid", "0:0.05:1", "--seed", "1", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().clone();
    assert!(header.iter().any(|h| h == "max_ratio"));
    assert_eq!(r.records().count(), 63 * 21);
}

#[test]
fn missing_seed_and_bad_input_exit_two() {
    let v = json(&qcmi(&["attack", "--protocol", "deutsch"]));
    assert_eq!(v["exit_code"], 2);
    assert_eq!(v["errors"][0]["kind"], "validation");
    assert_eq!(qcmi(&["attack", "--protocol", "nope", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(qcmi(&["walk", "--f-bound", "--t", "1,2", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn sweep_is_ordered_and_repeatable() {
    let args = ["sweep", "--protocol", "deutsch", "--c-grid", "1,0.25,0.5", "--seed", "9"];
    let (a, b) = (qcmi(&args), qcmi(&args));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    let cs: Vec<f64> = v["results"].as_array().unwrap().iter().map(|r| r["c"].as_f64().unwrap()).collect();
    assert_eq!(cs, [1.0, 0.25, 0.5]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = std::env::temp_dir().join(format!("qcmi-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, r#"{"seed": 4, "protocol": "short-sk", "t": 1}"#).unwrap();
    let out_path = dir.join("report.json");
    let out = qcmi(&["attack", "--config", cfg.to_str().unwrap(), "--t", "2", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["config"]["t"], 2);
    assert_eq!(v["config"]["seed"], 4);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = std::env::temp_dir().join(format!("qcmi-cfg-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 4, "colour": "blue"}"#).unwrap();
    let out = qcmi(&["lemmas", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn oversized_dim_cap_is_rejected() {
    let out = qcmi(&["walk", "--f-bound", "--t", "2", "--seed", "1", "--dim-cap", "999999999"]);
    assert_eq!(out.status.code(), Some(2));
}
