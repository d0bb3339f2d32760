//! Loads a 44.1 kHz stereo WAV, downmixes and resamples it to 16 kHz, and
//! checks the tone survives.
//!
//! cargo run --example resample_tone

use std::error::Error;

use svkit::audio::{load_audio, resample, rms_power, write_wav, WavEncoding, PIPELINE_RATE_HZ};

fn main() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("tone_44k.wav");

    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 44_100,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(&path, spec)?;
    for i in 0..44_100 {
        let v = (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44_100.0).sin() * 32767.0) as i16;
        writer.write_sample(v)?;
        writer.write_sample(v)?;
    }
    writer.finalize()?;

    let original = load_audio(&path)?;
    let converted = resample(&original, PIPELINE_RATE_HZ)?;
    println!(
        "{} samples at {} Hz -> {} samples at {} Hz",
        original.len(),
        original.sample_rate_hz(),
        converted.len(),
        converted.sample_rate_hz()
    );
    println!(
        "RMS before {:.4}, after {:.4} (a 0.5 sine has RMS {:.4})",
        rms_power(&original)?,
        rms_power(&converted)?,
        0.5 / 2f64.sqrt()
    );

    let out = dir.path().join("tone_16k.wav");
    write_wav(&converted, &out, WavEncoding::Float32)?;
    println!("wrote {}", out.display());
    Ok(())
}
