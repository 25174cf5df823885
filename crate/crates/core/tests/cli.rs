//! The `pif` binary: exit codes, formats and the replay | classify pipeline.

use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use pif::director::Marker;
use pif::transport::Recording;

fn pif() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pif"))
}

fn stories(dir: &str) -> Vec<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stories").join(dir);
    let mut v: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lint_exit_codes_and_json() {
    let ok = run(pif().arg("lint").args(stories("valid")));
    assert_eq!(ok.status.code(), Some(0));
    assert!(ok.stdout.is_empty());

    let bad = stories("defects");
    let out = run(pif().arg("lint").args(&bad));
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    for f in &bad {
        let name = f.file_name().unwrap().to_string_lossy();
        assert!(text.lines().any(|l| l.contains(&*name)), "{name} not reported");
    }

    let out = run(pif().args(["--format", "json", "lint"]).arg(&bad[0]));
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v[0]["line"].as_u64().unwrap() > 0);
    assert_eq!(v[0]["severity"], "error");
}

#[test]
fn play_headless() {
    let story = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stories/valid/two_doors.pif");
    let mut child = pif().arg("play").arg(&story).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(b"2\n\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("  1) Open the red door"), "{text}");
    assert!(text.contains("A cold draft greets you."));
    assert!(text.trim_end().ends_with("THE END"));

    // scripted, with an auto choice fed by --set
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.txt");
    std::fs::write(&script, "\n\n\n").unwrap();
    let threshold = story.with_file_name("threshold.pif");
    let out = run(pif()
        .args(["--format", "json", "play"])
        .arg(&threshold)
        .arg("--script")
        .arg(&script)
        .args(["--set", "phys_arousal=0.2"]));
    assert_eq!(out.status.code(), Some(0));
    let pages: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(pages[2]["page"]["knot"], "calm");

    // without it the automatic choice cannot run: runtime failure
    let out = run(pif().arg("play").arg(&threshold).arg("--script").arg(&script));
    assert_eq!(out.status.code(), Some(2));
    // a story that does not parse is a validation failure
    let bad = stories("defects")[0].clone();
    let out = run(pif().arg("play").arg(&bad).arg("--script").arg(&script));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_replay_into_classify_labels_each_window() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = d.join("cohort.csv");
    let out = run(pif().args(["simulate", "--cohort", "8", "--seed", "5", "-o"]).arg(&table));
    assert!(out.status.success());

    let out = run(pif()
        .args(["--format", "json", "train", "--construct", "arousal"])
        .arg(&table)
        .arg("-o")
        .arg(d.join("m.json"))
        .arg("--report")
        .arg(d.join("loso.csv"))
        .arg("--weights")
        .arg(d.join("weights.csv")));
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["accuracy"].as_f64().unwrap() >= 0.9, "{summary}");
    let weights = std::fs::read_to_string(d.join("weights.csv")).unwrap();
    assert!(weights.starts_with("feature,arousal"));
    assert_eq!(std::fs::read_to_string(d.join("loso.csv")).unwrap().lines().count(), 9);

    // a held-out subject never seen in training
    let rec = d.join("new.pifrec");
    let out = run(pif().args(["simulate", "--random-profile", "--seed", "77", "--subject", "new", "-o"]).arg(&rec));
    assert!(out.status.success());

    let mut replay = pif().arg("replay").arg(&rec).stdout(Stdio::piped()).spawn().unwrap();
    let classify = pif()
        .args(["classify", "--model"])
        .arg(d.join("m.json"))
        .stdin(replay.stdout.take().unwrap())
        .output()
        .unwrap();
    assert!(replay.wait().unwrap().success());
    assert!(classify.status.success(), "{}", String::from_utf8_lossy(&classify.stderr));
    let lines: Vec<Vec<String>> = stdout(&classify)
        .lines()
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect();

    // one line per window boundary, labels matching the embedded ground truth
    let recording = Recording::read(&rec).unwrap();
    let markers: Vec<Marker> = recording
        .samples
        .iter()
        .filter_map(|(_, s)| s.as_marker().map(|m| m.parse().unwrap()))
        .collect();
    let truth: Vec<String> = markers
        .iter()
        .filter_map(|m| match m {
            Marker::Label { construct, class } if construct == "arousal" => Some(class.clone()),
            _ => None,
        })
        .collect();
    let starts = markers.iter().filter(|m| matches!(m, Marker::TagStart(_))).count();
    assert_eq!(lines.len(), starts);
    let arousal: Vec<&String> = lines
        .iter()
        .filter(|l| ["BUNNY", "POLICE"].contains(&l[2].as_str()))
        .map(|l| &l[3])
        .collect();
    assert_eq!(arousal.len(), truth.len());
    for (got, want) in arousal.iter().zip(&truth) {
        assert_eq!(*got, want);
    }
}

/// Per-stream payloads and inter-sample intervals; replay rebases absolute time.
fn per_stream(rec: &Recording) -> Vec<(String, Vec<String>, Vec<f64>)> {
    (0..rec.streams.len())
        .map(|k| {
            let samples: Vec<_> = rec.samples_of(k).collect();
            let payload = samples.iter().map(|s| format!("{:?}", s.v)).collect();
            let deltas = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
            (rec.streams[k].source_id.clone(), payload, deltas)
        })
        .collect()
}

fn assert_same(a: &Recording, b: &Recording) {
    assert_eq!(a.streams, b.streams);
    for ((ia, pa, da), (ib, pb, db)) in per_stream(a).into_iter().zip(per_stream(b)) {
        assert_eq!(ia, ib);
        assert_eq!(pa, pb, "{ia}");
        assert_eq!(da.len(), db.len());
        assert!(da.iter().zip(&db).all(|(x, y)| (x - y).abs() <= 1e-6), "{ia}");
    }
}

#[test]
fn replay_to_stdout_is_a_recording_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("a.pifrec");
    assert!(run(pif().args(["simulate", "--seed", "2", "-o"]).arg(&rec)).status.success());
    let once = run(pif().arg("replay").arg(&rec));
    assert!(once.status.success());
    let again_path = dir.path().join("b.pifrec");
    std::fs::write(&again_path, &once.stdout).unwrap();
    let twice = run(pif().arg("replay").arg(&again_path));
    assert!(twice.status.success());
    let original = Recording::read(&rec).unwrap();
    let first = Recording::parse(&once.stdout[..]).unwrap();
    let second = Recording::parse(&twice.stdout[..]).unwrap();
    assert_same(&original, &first);
    assert_same(&first, &second);
}

#[test]
fn record_from_a_live_simulator() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut sim = pif().args(["simulate", "--serve", &addr, "--duration", "6"]).spawn().unwrap();
    std::thread::sleep(Duration::from_millis(700));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.pifrec");
    let out = run(pif()
        .args(["record", "--from", &addr, "--stream", "eda", "--stream", "state", "--duration", "1", "-o"])
        .arg(&path));
    let _ = sim.kill();
    let _ = sim.wait();
    assert!(out.status.success());
    let rec = Recording::read(&path).unwrap();
    assert_eq!(rec.streams.len(), 2);
    let eda = rec.stream("eda").unwrap();
    assert!(rec.samples_of(eda).count() > 300);
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("session.toml");
    std::fs::write(&cfg, "story = \"s.pif\"\npolicy = \"covert\"\n[input]\nsimulator = {}\n").unwrap();
    let out = run(pif().arg("serve").arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("covert"));
}
