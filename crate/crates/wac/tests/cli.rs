use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wac::pipeline::Scenario;
use wac::{run_pipeline, PipelineConfig};

fn wac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wac")).args(args).output().expect("wac runs")
}

fn ok(args: &[&str]) -> String {
    let out = wac(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn without_elapsed(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("elapsed_s");
    v
}

#[test]
fn stage_chain_reproduces_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&["simulate", "--plant", "twoarea", "--probe", "--out", &d("m.csv"), "--probes-out", &d("p.csv")]);
    ok(&["identify", "--in", &d("m.csv"), "--probes", &d("p.csv"), "--out", &d("model.json")]);
    ok(&["cluster", "--in", &d("m.csv"), "--decimate", "10", "--out", &d("grouping.json")]);
    ok(&["select", "--model", &d("model.json"), "--grouping", &d("grouping.json"), "--out", &d("selection.json")]);
    ok(&["synthesize", "--model", &d("model.json"), "--selection", &d("selection.json"), "--out", &d("controllers.json")]);
    ok(&["closedloop", "--plant", "twoarea", "--controllers", &d("controllers.json"), "--out", &d("damping.json")]);

    let run = run_pipeline(&PipelineConfig::default(), &Scenario::two_area()).unwrap();
    let rd = dir.path().join("run");
    run.write(&rd).unwrap();
    for name in ["model.json", "selection.json", "controllers.json", "damping.json"] {
        assert_eq!(json(&dir.path().join(name)), json(&rd.join(name)), "{name}");
    }
    let g = json(&dir.path().join("grouping.json"));
    assert!(g["elapsed_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(without_elapsed(g), json(&rd.join("grouping.json")));
}

#[test]
fn run_writes_every_listed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("quiet");
    let printed = ok(&["run", "--scenario", "quiet", "--out", out.to_str().unwrap()]);
    assert_eq!(printed.trim(), out.join("report.json").display().to_string());
    let report = json(&out.join("report.json"));
    assert_eq!(report["regroupings"], 0);
    for a in report["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists(), "{a}");
    }
    let timing = json(&out.join("timing.json"));
    assert!(timing["total_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_input_is_a_json_error() {
    let out = wac(&["cluster", "--in", "/nonexistent/m.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("/nonexistent/m.csv"));
}

#[test]
fn bad_arguments_are_usage_errors() {
    let out = wac(&["simulate", "--fault", "3:1", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "usage");
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"k": 3, "rho": 4.0}"#).unwrap();
    let v: Value = serde_json::from_str(&ok(&["--config", cfg.to_str().unwrap(), "defaults", "config"])).unwrap();
    assert_eq!(v["k"], 3);
    assert_eq!(v["rho"], 4.0);
    assert_eq!(v["window_len"], 500);

    std::fs::write(&cfg, r#"{"kk": 3}"#).unwrap();
    let out = wac(&["--config", cfg.to_str().unwrap(), "defaults", "config"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "io");
}

#[test]
fn preset_plant_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plant.json");
    std::fs::write(&p, ok(&["defaults", "plant", "--plant", "twoarea-shifted"])).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["simulate", "--plant", "twoarea-shifted", "--fault", "1:1:0.1:0.5", "--duration", "5", "--out", a.to_str().unwrap()]);
    ok(&["simulate", "--plant", p.to_str().unwrap(), "--fault", "1:1:0.1:0.5", "--duration", "5", "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
