use std::path::Path;

use svkit::audio::{load_audio, load_pipeline_audio, probe_duration, write_wav, AudioBuffer, AudioError, WavEncoding};

fn write_raw<S: hound::Sample + Copy>(path: &Path, spec: hound::WavSpec, samples: &[S]) {
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

fn int16_spec(channels: u16, rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

#[test]
fn stereo_is_averaged_to_mono() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    write_raw(&path, spec, &[1.0f32, 0.0, 0.5, -0.5]);
    let buf = load_audio(&path).unwrap();
    assert_eq!(buf.samples(), &[0.5, 0.0]);
}

#[test]
fn int16_full_scale_maps_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("int.wav");
    write_raw(&path, int16_spec(1, 16_000), &[-32768i16, 0, 16384, 32767]);
    let buf = load_audio(&path).unwrap();
    assert_eq!(buf.samples()[0], -1.0);
    assert_eq!(buf.samples()[2], 0.5);
    assert_eq!(buf.samples()[3], 32767.0 / 32768.0);
}

#[test]
fn three_seconds_at_16k_is_48000_samples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.wav");
    write_raw(&path, int16_spec(1, 16_000), &vec![100i16; 48_000]);
    assert_eq!(load_audio(&path).unwrap().len(), 48_000);
    assert_eq!(probe_duration(&path).unwrap(), (3.0, 16_000));
}

#[test]
fn float_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    let samples: Vec<f64> = (0..1000).map(|i| f64::from((i as f32 * 0.37).sin() * 0.8)).collect();
    let buf = AudioBuffer::new(samples.clone(), 22_050).unwrap();
    write_wav(&buf, &path, WavEncoding::Float32).unwrap();
    let back = load_audio(&path).unwrap();
    assert_eq!(back.sample_rate_hz(), 22_050);
    assert_eq!(back.samples(), samples.as_slice());
}

#[test]
fn pipeline_loader_resamples_to_16k() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("8k.wav");
    write_raw(&path, int16_spec(1, 8_000), &vec![1000i16; 8_000]);
    let buf = load_pipeline_audio(&path).unwrap();
    assert_eq!(buf.sample_rate_hz(), 16_000);
    assert_eq!(buf.len(), 16_000);
}

#[test]
fn missing_and_unsupported_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_audio(dir.path().join("absent.wav")),
        Err(AudioError::MissingFile(_))
    ));
    let text = dir.path().join("notes.wav");
    std::fs::write(&text, "not a wav file at all").unwrap();
    assert!(matches!(load_audio(&text), Err(AudioError::UnsupportedFormat { .. })));
    let pcm24 = dir.path().join("24.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 24,
        sample_format: hound::SampleFormat::Int,
    };
    write_raw(&pcm24, spec, &[1i32, 2, 3]);
    assert!(matches!(load_audio(&pcm24), Err(AudioError::UnsupportedFormat { .. })));
}
