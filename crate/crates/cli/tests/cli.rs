use std::path::Path;
use std::process::{Command, Output};

use semscene::export::{Manifest, MANIFEST_FILE, OBJECTS_DIR, USDA_FILE};
use tempfile::tempdir;

fn semscene(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semscene"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = semscene(&["synth", "--out", s(dir), "--width", "160"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(semscene(&["--help"]).status.code(), Some(0));
    assert_eq!(semscene(&["--version"]).status.code(), Some(0));
    assert_eq!(semscene(&[]).status.code(), Some(1));
    assert_eq!(semscene(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(semscene(&["run"]).status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_1() {
    let dir = tempdir().unwrap();
    let out = semscene(&[
        "run",
        "--dataset",
        s(&dir.path().join("nope")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn synth_run_eval_inspect() {
    let dir = tempdir().unwrap();
    let ds = dir.path().join("ds");
    let run = dir.path().join("run");
    synth(&ds);

    let out = semscene(&["run", "--dataset", s(&ds), "--out", s(&run)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = Manifest::read(&run.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.objects.len(), 6);
    assert!(run.join(USDA_FILE).is_file());
    for o in &m.objects {
        assert!(run.join(&o.ply).is_file());
    }

    let out = semscene(&["eval", "--dataset", s(&ds), "--out", s(&run)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["objects"]["static_found"], 6);
    assert_eq!(report["objects"]["static_expected"], 6);
    assert!(report["cloud_error"]["mean_mm"].as_f64().unwrap() <= 50.0);

    let out = semscene(&["inspect", s(&run)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("objects: 6"));
    let out = semscene(&["inspect", s(&ds)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("frames: 5"));
}

#[test]
fn bench_reports_count_reduction() {
    let dir = tempdir().unwrap();
    let ds = dir.path().join("ds");
    let rows = dir.path().join("rows.jsonl");
    synth(&ds);
    let out = semscene(&[
        "bench",
        "--dataset",
        s(&ds),
        "--trials",
        "1",
        "--out",
        s(&rows),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&rows).unwrap();
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert!(r["count_factor"].as_f64().unwrap() >= 1.0);
    }
}

#[test]
fn config_with_unknown_key_exits_1() {
    let dir = tempdir().unwrap();
    let ds = dir.path().join("ds");
    synth(&ds);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"fusion": {"alpha": 0.3}, "colour": "red"}"#).unwrap();
    let out = semscene(&[
        "run",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    std::fs::write(&cfg, r#"{"fusion": {"alpha": 1.5}}"#).unwrap();
    let out = semscene(&[
        "run",
        "--config",
        s(&cfg),
        "--dataset",
        s(&ds),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn failed_export_leaves_no_partial_output() {
    let dir = tempdir().unwrap();
    let ds = dir.path().join("ds");
    let run = dir.path().join("run");
    synth(&ds);
    // a directory where the last output file goes makes the final write fail
    std::fs::create_dir_all(run.join("frame_stats.jsonl")).unwrap();
    let out = semscene(&["run", "--dataset", s(&ds), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.join(MANIFEST_FILE).exists());
    assert!(!run.join(USDA_FILE).exists());
    assert!(!run.join(OBJECTS_DIR).exists());
    assert!(run.join("frame_stats.jsonl").is_dir());
}
