use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn autoanno(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoanno")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scene(dir: &Path) {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, r#"{"frames": 12, "seed": 7}"#).unwrap();
    let out = autoanno(&["synth", "--config", path(&cfg), "--out", path(&dir.join("scene"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_annotate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let scene = dir.path().join("scene");

    let out = autoanno(&["annotate", "--config", path(&scene.join("annotate.json")), "--dump-lanes", "--dump-tracks"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for row in ["Object detection", "Object classification", "Lane identification", "Object tracking", "Total"] {
        assert!(stdout.contains(row), "missing {row:?} in\n{stdout}");
    }
    assert!(scene.join("annotations.json").exists());
    assert_eq!(fs::read_to_string(scene.join("annotations.lanes.jsonl")).unwrap().lines().count(), 12);
    assert_eq!(fs::read_to_string(scene.join("annotations.tracks.jsonl")).unwrap().lines().count(), 12);

    let report = dir.path().join("report.json");
    let out = autoanno(&[
        "evaluate",
        "--pred", path(&scene.join("annotations.json")),
        "--gt", path(&scene.join("gt.json")),
        "--json-out", path(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["map", "per_class_ap", "mota", "motp", "mt", "ml", "lane_accuracy"] {
        assert!(json.get(key).is_some(), "report lacks {key}");
    }
    // tracks confirm after a few hits, so the opening frames go unannotated
    assert!(json["lane_accuracy"].as_f64().unwrap() >= 80.0);
    assert_eq!(json["ml"].as_f64(), Some(0.0));
}

#[test]
fn evaluate_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let gt = dir.path().join("scene/gt.json");
    let out = autoanno(&["evaluate", "--pred", path(&gt), "--gt", path(&gt), "--interpolation", "11-point"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("FN/FP/IDSW               0/0/0"), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("mean") && l.matches("100.00").count() == 2), "{stdout}");
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(autoanno(&["annotate", "--config", path(&missing)]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version":"1.0","sequence_id":"s","frames":[{"index":0,"records":[{"frame_index":0,"track_id":1,"object_type":"spaceship","size":{"minx":0,"miny":0,"maxx":1,"maxy":1}}]}]}"#).unwrap();
    let out = autoanno(&["evaluate", "--pred", path(&bad), "--gt", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frames[0].records[0].object_type"));

    assert_eq!(autoanno(&["annotate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(autoanno(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_frame_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let scene = dir.path().join("scene");
    let frames = scene.join("frames");
    let victim = fs::read_dir(&frames).unwrap().map(|e| e.unwrap().path()).max().unwrap();
    fs::remove_file(victim).unwrap();
    let out = autoanno(&["annotate", "--config", path(&scene.join("annotate.json"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn replay_reproduces_an_exported_correction() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let gt = dir.path().join("scene/gt.json");
    let original = fs::read_to_string(&gt).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&original).unwrap();
    let record = &doc["frames"][3]["records"][0];
    let (frame, track) = (record["frame_index"].as_u64().unwrap(), record["track_id"].as_u64().unwrap());
    let category = record["props"].as_object().unwrap().keys().next().unwrap().clone();
    let old = record["props"][&category]["occlusion"].clone();
    let new = if old == "full" { "none" } else { "full" };

    let diff = dir.path().join("diff.json");
    fs::write(
        &diff,
        serde_json::json!({"edits": [{"frame": frame, "track_id": track, "field": "occlusion", "old": old, "new": new}]}).to_string(),
    )
    .unwrap();
    let export = dir.path().join("export.json");
    let out = autoanno(&["replay", "--original", path(&gt), "--diff", path(&diff), "--out", path(&export)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let exported = fs::read_to_string(&export).unwrap();
    assert_ne!(exported, original.trim_end());

    let out = autoanno(&["replay", "--original", path(&gt), "--diff", path(&diff), "--expect", path(&export)]);
    assert!(out.status.success());
    let out = autoanno(&["replay", "--original", path(&gt), "--diff", path(&diff), "--expect", path(&gt)]);
    assert_eq!(out.status.code(), Some(1));

    // replaying the same edit onto the export is stale
    let out = autoanno(&["replay", "--original", path(&export), "--diff", path(&diff)]);
    assert_eq!(out.status.code(), Some(1));
}
