use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svkit::audio::{write_wav, AudioBuffer, WavEncoding};
use svkit::scoring::EmbeddingArchive;

fn svkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svkit"))
        .args(args)
        .env_remove("SVKIT_SEED")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tone(seconds: f64, freq: f64) -> AudioBuffer {
    let n = (seconds * 16_000.0) as usize;
    let samples = (0..n)
        .map(|i| 0.25 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
        .collect();
    AudioBuffer::new(samples, 16_000).unwrap()
}

/// Four speakers with four 3.5 s utterances each plus one 2 s file.
fn corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    for spk in 0..4 {
        for u in 0..4 {
            let path = dir.join(format!("spk{spk}/u{u}.wav"));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            write_wav(&tone(3.5, 200.0 + 30.0 * (spk * 4 + u) as f64), &path, WavEncoding::Float32).unwrap();
        }
    }
    write_wav(&tone(2.0, 500.0), dir.join("spk0/short.wav"), WavEncoding::Float32).unwrap();
    dir
}

fn manifest(root: &Path) -> PathBuf {
    let out = root.join("manifest.jsonl");
    let o = svkit(&["manifest", "--source", s(&corpus(root)), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn manifest_reports_exclusions_and_writes_run_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m/manifest.jsonl");
    let o = svkit(&["manifest", "--source", s(&corpus(dir.path())), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("1 excluded"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 16);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m/run.json")).unwrap()).unwrap();
    assert_eq!(run["invocation"]["command"]["manifest"]["min_duration"], 3.0);
}

#[test]
fn bad_ratios_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let o = svkit(&[
        "split", "--manifest", s(&m), "--out", s(&dir.path().join("x.jsonl")), "--train", "0.6", "--val", "0.15",
        "--test", "0.15",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ratios"), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = svkit(&["manifest", "--source", s(&dir.path().join("nope")), "--out", s(&dir.path().join("m.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn split_is_deterministic_and_env_seed_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let run = |name: &str, extra: &[&str], env_seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_svkit"));
        cmd.args(["split", "--manifest", s(&m), "--out", s(&out)]).args(extra).env_remove("SVKIT_SEED");
        if let Some(seed) = env_seed {
            cmd.env("SVKIT_SEED", seed);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(out).unwrap()
    };
    let a = run("a.jsonl", &["--seed", "42"], None);
    let b = run("b.jsonl", &["--seed", "42"], None);
    let c = run("c.jsonl", &[], Some("42"));
    let d = run("d.jsonl", &["--seed", "7"], None);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, d);
}

#[test]
fn passthrough_augmentation_copies_audio() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("aug");
    let o = svkit(&[
        "augment", "--manifest", s(&m), "--out-dir", s(&out), "--p-noise", "0", "--p-babble", "0", "--p-reverb", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let src = dir.path().join("corpus");
    for spk in 0..4 {
        for u in 0..4 {
            let rel = format!("spk{spk}/u{u}.wav");
            assert_eq!(fs::read(src.join(&rel)).unwrap(), fs::read(out.join(&rel)).unwrap());
        }
    }
    let log = fs::read_to_string(out.join("augment_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 16);
    assert!(out.join("augmented.jsonl").exists());
}

#[test]
fn augmentation_snrs_stay_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let noise = dir.path().join("noises/noise/hum.wav");
    fs::create_dir_all(noise.parent().unwrap()).unwrap();
    write_wav(&tone(1.0, 60.0), &noise, WavEncoding::Float32).unwrap();
    let out = dir.path().join("aug");
    let o = svkit(&[
        "augment", "--manifest", s(&m), "--noise-dir", s(&dir.path().join("noises")), "--out-dir", s(&out),
        "--snr-min", "5", "--snr-max", "15", "--p-noise", "0.5", "--p-babble", "0.5", "--p-reverb", "0",
        "--babble-min", "2", "--babble-max", "3", "--copies", "3", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut seen = 0;
    for line in fs::read_to_string(out.join("augment_log.jsonl")).unwrap().lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        let snr = entry["additive"]["snr_db"].as_f64().unwrap();
        assert!((5.0..=15.0).contains(&snr), "{snr}");
        seen += 1;
    }
    assert_eq!(seen, 48);
}

#[test]
fn augmentation_failures_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    fs::remove_file(dir.path().join("corpus/spk1/u2.wav")).unwrap();
    let out = dir.path().join("aug");
    let o = svkit(&[
        "augment", "--manifest", s(&m), "--out-dir", s(&out), "--p-noise", "0", "--p-babble", "0", "--p-reverb", "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let log = fs::read_to_string(out.join("augment_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 16);
    assert_eq!(log.lines().filter(|l| l.contains("\"error\"")).count(), 1);
}

fn archive_file(dir: &Path, entries: &[(&str, Vec<f32>)]) -> PathBuf {
    let mut a = EmbeddingArchive::new(entries[0].1.len(), "test");
    for (id, v) in entries {
        a.insert(*id, v.clone()).unwrap();
    }
    let path = dir.join("emb.svem");
    a.write(&path).unwrap();
    path
}

#[test]
fn identical_pairs_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let archive = archive_file(
        dir.path(),
        &[("a1", vec![1.0, 2.0, 3.0]), ("a2", vec![1.0, 2.0, 3.0]), ("b1", vec![-3.0, 0.5, 1.0]), ("b2", vec![-3.0, 0.5, 1.0])],
    );
    let trials = dir.path().join("trials.txt");
    fs::write(&trials, "a1 a2 1\nb1 b2 1\n").unwrap();
    let out = dir.path().join("scores.txt");
    let o = svkit(&["score", "--archive", s(&archive), "--trials", s(&trials), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in fs::read_to_string(out).unwrap().lines() {
        let score: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!((score - 1.0).abs() < 1e-6);
    }
}

fn eval_scores(dir: &Path, lines: &[(&str, &str, f64, u8)]) -> (Output, serde_json::Value) {
    let trials = dir.join("trials.txt");
    let scores = dir.join("scores.txt");
    fs::write(&trials, lines.iter().map(|(e, t, _, l)| format!("{e} {t} {l}\n")).collect::<String>()).unwrap();
    fs::write(&scores, lines.iter().map(|(e, t, sc, _)| format!("{e} {t} {sc}\n")).collect::<String>()).unwrap();
    let report = dir.join("report.json");
    let o = svkit(&["eval", "--scores", s(&scores), "--trials", s(&trials), "--report", s(&report)]);
    let json = serde_json::from_str(&fs::read_to_string(report).unwrap_or_else(|_| "null".into())).unwrap();
    (o, json)
}

#[test]
fn eval_reports_eer_percentages() {
    let dir = tempfile::tempdir().unwrap();
    let (o, report) = eval_scores(
        dir.path(),
        &[("a", "b", 0.9, 1), ("c", "d", 0.8, 1), ("e", "f", 0.1, 0), ("g", "h", 0.2, 0)],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("0.00%"), "{}", stdout(&o));
    assert!(stdout(&o).contains("n/a"));
    assert_eq!(report["eer_raw"], 0.0);
    assert!(report["eer_snorm"].is_null());

    let (o, report) = eval_scores(
        dir.path(),
        &[("a", "b", 0.9, 1), ("c", "d", 0.8, 1), ("e", "f", 0.3, 1), ("g", "h", 0.7, 0), ("i", "j", 0.2, 0), ("k", "l", 0.1, 0)],
    );
    assert!(stdout(&o).contains("33.33%"), "{}", stdout(&o));
    assert!((report["eer_raw"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn eval_without_both_classes_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = eval_scores(dir.path(), &[("a", "b", 0.9, 1), ("c", "d", 0.8, 1)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_with_cohort_writes_normalized_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = vec![
        ("a1", vec![1.0f32, 0.1, 0.0]),
        ("a2", vec![0.9, 0.2, 0.1]),
        ("b1", vec![0.0, 1.0, 0.2]),
    ];
    let cohort_vecs = [[0.5f32, 0.5, 0.5], [1.0, -1.0, 0.0], [0.0, 0.3, 1.0], [-1.0, 0.2, 0.4]];
    let names = ["c0", "c1", "c2", "c3"];
    for (n, v) in names.iter().zip(cohort_vecs) {
        entries.push((n, v.to_vec()));
    }
    let archive = archive_file(dir.path(), &entries);
    let trials = dir.path().join("trials.txt");
    fs::write(&trials, "a1 a2 1\na1 b1 0\n").unwrap();
    let cohort = dir.path().join("cohort.txt");
    fs::write(&cohort, names.join("\n")).unwrap();
    let out = dir.path().join("scores.txt");
    let o = svkit(&[
        "score", "--archive", s(&archive), "--trials", s(&trials), "--out", s(&out), "--cohort", s(&cohort), "--top-k",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let normalized = fs::read_to_string(dir.path().join("scores.txt.snorm")).unwrap();
    assert_eq!(normalized.lines().count(), 2);

    let report = dir.path().join("r.json");
    let o = svkit(&[
        "eval", "--archive", s(&archive), "--trials", s(&trials), "--cohort", s(&cohort), "--top-k", "3", "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["eer_snorm"], 0.0);
    assert_eq!(r["cohort_size"], 4);
}

#[test]
fn det_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let archive = archive_file(dir.path(), &[("a", vec![1.0, 0.0]), ("b", vec![0.8, 0.2]), ("c", vec![0.0, 1.0])]);
    let trials = dir.path().join("trials.txt");
    fs::write(&trials, "a b 1\na c 0\n").unwrap();
    let out = dir.path().join("det.csv");
    let o = svkit(&["det", "--archive", s(&archive), "--trials", s(&trials), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "threshold,far,frr");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("inf,0,1"));
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = String::new();
    let mut entries = Vec::new();
    let mut trials = String::new();
    for spk in 0..6 {
        for u in 0..6 {
            let id = format!("s{spk}u{u}");
            let split = if u < 4 { "train" } else { "val" };
            records += &format!(
                "{{\"utterance_id\":\"{id}\",\"speaker_id\":\"s{spk}\",\"path\":\"x.wav\",\"duration_s\":4.0,\"split\":\"{split}\"}}\n"
            );
            let v: Vec<f32> = (0..4).map(|d| if d == spk % 4 { 1.0 } else { 0.1 * (u as f32 + spk as f32) }).collect();
            entries.push((id, v));
        }
        trials += &format!("s{spk}u4 s{spk}u5 1\ns{spk}u4 s{}u5 0\n", (spk + 1) % 6);
    }
    let manifest = dir.path().join("m.jsonl");
    fs::write(&manifest, records).unwrap();
    let refs: Vec<(&str, Vec<f32>)> = entries.iter().map(|(i, v)| (i.as_str(), v.clone())).collect();
    let archive = archive_file(dir.path(), &refs);
    let trial_file = dir.path().join("val.txt");
    fs::write(&trial_file, trials).unwrap();
    let out = dir.path().join("model/adapter.svad");
    let o = svkit(&[
        "train", "--train-archive", s(&archive), "--manifest", s(&manifest), "--val-trials", s(&trial_file), "--out",
        s(&out), "--max-epochs", "3", "--batch-speakers", "3", "--utts-per-speaker", "2", "--d-out", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"SVAD");
    assert_eq!(bytes.len(), 16 + 4 * (3 * 4 + 3));
    let history = fs::read_to_string(dir.path().join("model/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss,val_eer,lr"));

    let bad = svkit(&[
        "train", "--train-archive", s(&archive), "--manifest", s(&manifest), "--val-trials", s(&trial_file), "--out",
        s(&out), "--plateau-factor", "1.5",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
