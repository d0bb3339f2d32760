//! Reverberates an utterance, adds background noise at a random SNR and
//! synthesizes babble from other speakers, logging every draw.
//!
//! cargo run --example augment_pipeline

use std::collections::HashMap;
use std::error::Error;

use rand::Rng;
use svkit::audio::{rms_power, AudioBuffer};
use svkit::augment::{
    apply_rir, mix_at_snr_detailed, AugmentPolicy, Augmenter, MemoryLoader, NoiseBank, NoiseKind, NoiseSource,
    DEFAULT_MAX_RIR_LEN,
};
use svkit::corpus::UtteranceRecord;
use svkit::seed::rng_from_seed;

const RATE: u32 = 16_000;

fn voiced(rng: &mut impl Rng, seconds: f64) -> Result<AudioBuffer, Box<dyn Error>> {
    let f0 = rng.random_range(180.0..320.0);
    let n = (seconds * f64::from(RATE)) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(RATE);
            let envelope = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            0.3 * envelope * (1..4).map(|h| (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64).sum::<f64>()
        })
        .collect();
    Ok(AudioBuffer::new(samples, RATE)?)
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = rng_from_seed(11);

    // 14 speakers with one utterance each act as the corpus and babble pool
    let mut audio = HashMap::new();
    let mut pool = Vec::new();
    for s in 0..14 {
        let id = format!("spk{s:02}/u0");
        audio.insert(id.clone(), voiced(&mut rng, 3.0)?);
        pool.push(UtteranceRecord::new(id, format!("spk{s:02}"), "memory", 3.0));
    }
    let loader = MemoryLoader(audio.clone());

    let hum: Vec<f64> = (0..RATE as usize).map(|i| 0.2 * (i as f64 * 0.0236).sin() + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let rir: Vec<f64> = (0..2_400).map(|i| if i == 0 { 1.0 } else { rng.random_range(-0.3..0.3) * (-(i as f64) / 400.0).exp() }).collect();
    let sources = vec![
        NoiseSource::new(NoiseKind::Background, AudioBuffer::new(hum, RATE)?, "hvac", DEFAULT_MAX_RIR_LEN)?,
        NoiseSource::new(NoiseKind::Rir, AudioBuffer::new(rir, RATE)?, "classroom", DEFAULT_MAX_RIR_LEN)?,
    ];
    let bank = NoiseBank::from_sources(sources, pool.clone());

    // the building blocks on their own
    let clean = &audio["spk00/u0"];
    let wet = apply_rir(clean, bank.rirs[0].buffer())?;
    let mix = mix_at_snr_detailed(&wet, bank.background[0].buffer(), 10.0)?;
    println!(
        "reverb keeps RMS {:.4} -> {:.4}; 10 dB mix uses noise gain {:.4} (peak scale {})",
        rms_power(clean)?,
        rms_power(&wet)?,
        mix.noise_gain,
        mix.peak_scale
    );

    // the seeded policy, one draw per utterance
    let policy = AugmentPolicy {
        babble_speakers_min: 4,
        babble_speakers_max: 8,
        seed: 2024,
        ..AugmentPolicy::default()
    };
    let augmenter = Augmenter {
        policy: &policy,
        bank: &bank,
        loader: &loader,
    };
    for record in pool.iter().take(5) {
        let (_, log) = augmenter.augment_record(record, 0, 0)?;
        println!("{}", serde_json::to_string(&log)?);
    }
    Ok(())
}
