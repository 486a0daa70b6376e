use std::path::Path;
use std::process::{Command, Output};

fn lomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lomm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = lomm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_track_eval_losses_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    ok(&["simulate", "--preset", "static", "--seed", "3", "--out", &p("scene.json")]);
    ok(&["render", "--scenario", &p("scene.json"), "--out", &p("scene.jsonl")]);
    ok(&["track", "--scenario", &p("scene.json"), "--out", &p("a.json")]);
    ok(&["track", "--features", &p("scene.jsonl"), "--out", &p("b.json")]);
    assert_eq!(json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));

    ok(&["eval", "--result", &p("a.json"), "--scenario", &p("scene.json"), "--out", &p("eval.json")]);
    let eval = json(&dir.path().join("eval.json"));
    assert_eq!(eval["metrics"]["id_switches"], 0);
    assert_eq!(eval["metrics"]["association_accuracy"], 1.0);

    ok(&["losses", "--result", &p("a.json"), "--scenario", &p("scene.json"), "--out", &p("loss.json")]);
    let loss = json(&dir.path().join("loss.json"));
    assert!(loss["losses"].as_array().unwrap().iter().all(|l| l["value"].as_f64().unwrap().is_finite()));
}

#[test]
fn compare_reads_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    std::fs::create_dir(&scenes).unwrap();
    for seed in ["0", "1"] {
        let out = scenes.join(format!("s{seed}.json"));
        ok(&["simulate", "--preset", "reappearance", "--seed", seed, "--out", out.to_str().unwrap()]);
    }
    let report = dir.path().join("report.json");
    ok(&["compare", "--scenarios", scenes.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(json(&report)["configurations"].as_array().unwrap().len(), 9);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    let run = lomm(&["track", "--features", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).starts_with("lomm: "));

    let missing = dir.path().join("nope.json");
    let run = lomm(&["track", "--scenario", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(!out.exists());
}
