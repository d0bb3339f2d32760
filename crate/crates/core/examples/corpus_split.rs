//! Builds a manifest from a speaker directory tree, splits it 70/15/15 per
//! speaker and samples a validation trial list.
//!
//! cargo run --example corpus_split

use std::error::Error;
use std::fs;

use svkit::audio::{write_wav, AudioBuffer, WavEncoding};
use svkit::corpus::{
    build_manifest, generate_trials, stratified_split, write_trials, Split, SplitMode, SplitRatios,
    DEFAULT_MIN_DURATION_S,
};

fn main() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("corpus");
    for spk in 0..6 {
        for utt in 0..12 {
            // every sixth recording is too short and gets filtered out
            let seconds = if utt % 6 == 5 { 2.0 } else { 3.0 + utt as f64 * 0.25 };
            let samples = vec![0.05; (seconds * 16_000.0) as usize];
            let path = root.join(format!("child{spk:02}/session1/utt{utt:02}.wav"));
            fs::create_dir_all(path.parent().unwrap())?;
            write_wav(&AudioBuffer::new(samples, 16_000)?, &path, WavEncoding::Int16)?;
        }
    }

    let (manifest, summary) = build_manifest(&root, DEFAULT_MIN_DURATION_S)?;
    println!("manifest: {summary}");

    let split = stratified_split(&manifest, SplitRatios::default(), 42, SplitMode::PerSpeaker)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("{s:>5}: {} utterances", split.in_split(s).count());
    }
    split.write_jsonl(dir.path().join("split.jsonl"))?;

    let trials = generate_trials(&split, Some(Split::Val), 5, 30, 42)?;
    write_trials(&trials, dir.path().join("val_trials.txt"))?;
    for t in trials.iter().take(3) {
        println!("{} {} {}", t.enroll, t.test, if t.label.is_target() { 1 } else { 0 });
    }
    println!("... {} trials in total", trials.len());
    Ok(())
}
