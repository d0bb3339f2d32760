use std::fs;
use std::path::Path;

use svkit::audio::{write_wav, AudioBuffer, WavEncoding};
use svkit::corpus::{build_manifest, Manifest, Split, DEFAULT_MIN_DURATION_S};

fn wav(path: &Path, seconds: f64) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let n = (seconds * 16_000.0).round() as usize;
    let buf = AudioBuffer::new(vec![0.1; n], 16_000).unwrap();
    write_wav(&buf, path, WavEncoding::Int16).unwrap();
}

#[test]
fn directory_source_filters_by_duration() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    for spk in ["alice", "bob"] {
        for u in 0..3 {
            wav(&root.join(spk).join(format!("u{u}.wav")), 3.5);
        }
    }
    wav(&root.join("alice/short.wav"), 2.9);
    wav(&root.join("bob/session1/exact.wav"), 3.0);

    let (manifest, summary) = build_manifest(&root, DEFAULT_MIN_DURATION_S).unwrap();
    assert_eq!(summary.speakers, 2);
    assert_eq!(summary.utterances, 7);
    assert_eq!(summary.excluded, 1);
    assert!(manifest.get("alice/short").is_none());
    let exact = manifest.get("bob/session1/exact").unwrap();
    assert_eq!(exact.speaker_id, "bob");
    assert_eq!(exact.duration_s, 3.0);
    assert!(manifest.records().iter().all(|r| r.split == Split::Unassigned));
}

#[test]
fn csv_paths_resolve_against_the_table() {
    let dir = tempfile::tempdir().unwrap();
    wav(&dir.path().join("audio/a.wav"), 4.0);
    let csv = dir.path().join("list.csv");
    fs::write(&csv, "utterance_id,speaker_id,path\nu1,s1,audio/a.wav\n").unwrap();
    let (manifest, _) = build_manifest(&csv, 3.0).unwrap();
    let r = manifest.get("u1").unwrap();
    assert_eq!(r.duration_s, 4.0);
    assert!(r.path.is_absolute() || r.path.starts_with(dir.path()));
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.jsonl");
    fs::write(
        &src,
        "{\"utterance_id\":\"u1\",\"speaker_id\":\"s1\",\"path\":\"x.wav\",\"duration_s\":5.0}\n\
         {\"utterance_id\":\"u2\",\"speaker_id\":\"s1\",\"path\":\"y.wav\",\"duration_s\":1.0}\n",
    )
    .unwrap();
    let (manifest, summary) = build_manifest(&src, 3.0).unwrap();
    assert_eq!(summary.excluded, 1);
    let out = dir.path().join("out.jsonl");
    manifest.write_jsonl(&out).unwrap();
    let back = Manifest::read_jsonl(&out).unwrap();
    assert_eq!(back.records(), manifest.records());
}
