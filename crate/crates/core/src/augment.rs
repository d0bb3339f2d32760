//! Classroom-condition augmentation: children's babble synthesis, additive
//! noise at a target SNR and reverberation by room-impulse-response
//! convolution, composed by a seeded random policy.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::audio::{load_pipeline_audio, rms_of, AudioBuffer, AudioError, PIPELINE_RATE_HZ};
use crate::convolve::fft_convolve;
use crate::corpus::UtteranceRecord;
use crate::seed::{rng_from_seed, utterance_seed, SeededRng};

/// Longest RIR accepted by default (2 s at 16 kHz).
pub const DEFAULT_MAX_RIR_LEN: usize = 32_000;

/// Peak level a clipping mix is rescaled to.
pub const CLIP_RESCUE_PEAK: f64 = 0.99;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("signal is silent")]
    SilentSignal,
    #[error("noise is silent")]
    SilentNoise,
    #[error("sample rate mismatch: {expected} Hz vs {found} Hz")]
    RateMismatch { expected: u32, found: u32 },
    #[error("room impulse response is empty")]
    EmptyRir,
    #[error("RIR {label:?} has {len} samples, limit is {max}")]
    RirTooLong { label: String, len: usize, max: usize },
    #[error("noise source {0:?} is empty")]
    EmptyNoise(String),
    #[error("babble pool is empty")]
    EmptyPool,
    #[error("babble needs {needed} distinct speakers, pool has {found}")]
    InsufficientSpeakers { needed: usize, found: usize },
    #[error("policy can select {0} but no such source is available")]
    MissingNoise(NoiseKind),
    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub babble_speakers_min: usize,
    pub babble_speakers_max: usize,
    pub p_noise: f64,
    pub p_babble: f64,
    pub p_reverb: f64,
    pub seed: u64,
    /// Normalize every babble track to unit RMS before summation.
    pub balance_babble: bool,
    /// Augmented copies produced per clean utterance.
    pub copies: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            snr_db_min: 5.0,
            snr_db_max: 15.0,
            babble_speakers_min: 12,
            babble_speakers_max: 25,
            p_noise: 0.4,
            p_babble: 0.4,
            p_reverb: 0.5,
            seed: 0,
            balance_babble: true,
            copies: 1,
        }
    }
}

impl AugmentPolicy {
    /// A policy that leaves every utterance untouched.
    pub fn passthrough(seed: u64) -> Self {
        Self {
            p_noise: 0.0,
            p_babble: 0.0,
            p_reverb: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidPolicy(msg));
        if !(self.snr_db_min.is_finite() && self.snr_db_max.is_finite()) {
            return bad("SNR bounds must be finite".into());
        }
        if self.snr_db_min > self.snr_db_max {
            return bad(format!(
                "snr_db_min {} exceeds snr_db_max {}",
                self.snr_db_min, self.snr_db_max
            ));
        }
        if self.babble_speakers_min < 1 || self.babble_speakers_min > self.babble_speakers_max {
            return bad(format!(
                "babble speaker range {}..={} is invalid",
                self.babble_speakers_min, self.babble_speakers_max
            ));
        }
        for (name, p) in [
            ("p_noise", self.p_noise),
            ("p_babble", self.p_babble),
            ("p_reverb", self.p_reverb),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        // noise and babble are mutually exclusive branches of one draw
        if self.p_noise + self.p_babble > 1.0 + 1e-12 {
            return bad(format!(
                "p_noise + p_babble = {} exceeds 1",
                self.p_noise + self.p_babble
            ));
        }
        if self.copies == 0 {
            return bad("copies must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Background,
    Babble,
    Rir,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Background => "background",
            NoiseKind::Babble => "babble",
            NoiseKind::Rir => "rir",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    kind: NoiseKind,
    buffer: AudioBuffer,
    label: String,
}

impl NoiseSource {
    pub fn new(
        kind: NoiseKind,
        buffer: AudioBuffer,
        label: impl Into<String>,
        max_rir_len: usize,
    ) -> Result<Self, AugmentError> {
        let label = label.into();
        if buffer.is_empty() {
            return Err(AugmentError::EmptyNoise(label));
        }
        if kind == NoiseKind::Rir && buffer.len() > max_rir_len {
            return Err(AugmentError::RirTooLong {
                label,
                len: buffer.len(),
                max: max_rir_len,
            });
        }
        Ok(Self {
            kind,
            buffer,
            label,
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn buffer(&self) -> &AudioBuffer {
        &self.buffer
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Source of utterance audio for babble synthesis.
pub trait AudioLoader: Sync {
    fn load(&self, record: &UtteranceRecord) -> Result<AudioBuffer, AudioError>;
}

/// Reads `record.path` and resamples to the pipeline rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileLoader;

impl AudioLoader for FileLoader {
    fn load(&self, record: &UtteranceRecord) -> Result<AudioBuffer, AudioError> {
        load_pipeline_audio(&record.path)
    }
}

/// In-memory audio keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct MemoryLoader(pub HashMap<String, AudioBuffer>);

impl AudioLoader for MemoryLoader {
    fn load(&self, record: &UtteranceRecord) -> Result<AudioBuffer, AudioError> {
        self.0
            .get(&record.utterance_id)
            .cloned()
            .ok_or_else(|| AudioError::MissingFile(PathBuf::from(&record.utterance_id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Babble {
    pub buffer: AudioBuffer,
    pub speaker_ids: Vec<String>,
    pub utterance_ids: Vec<String>,
}

/// Sums one utterance from each of `n_speakers` distinct speakers, every track
/// looped or cut to `target_len`, and scales the sum to unit RMS.
pub fn synth_babble<L: AudioLoader + ?Sized, R: Rng + ?Sized>(
    pool: &[UtteranceRecord],
    n_speakers: usize,
    target_len: usize,
    rng: &mut R,
    loader: &L,
    balance_tracks: bool,
) -> Result<Babble, AugmentError> {
    if pool.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    if target_len == 0 {
        return Err(AugmentError::Audio(AudioError::EmptyBuffer));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in pool {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    if by_speaker.len() < n_speakers {
        return Err(AugmentError::InsufficientSpeakers {
            needed: n_speakers,
            found: by_speaker.len(),
        });
    }
    let speakers: Vec<&str> = by_speaker.keys().copied().collect();
    let mut chosen = index::sample(rng, speakers.len(), n_speakers).into_vec();
    chosen.sort_unstable();

    let mut mix = vec![0.0; target_len];
    let mut rate = None;
    let mut speaker_ids = Vec::with_capacity(n_speakers);
    let mut utterance_ids = Vec::with_capacity(n_speakers);
    for s in chosen {
        let speaker = speakers[s];
        let record = *by_speaker[speaker]
            .choose(rng)
            .expect("speaker groups are non-empty");
        let track = loader.load(record)?;
        match rate {
            None => rate = Some(track.sample_rate_hz()),
            Some(r) if r != track.sample_rate_hz() => {
                return Err(AugmentError::RateMismatch {
                    expected: r,
                    found: track.sample_rate_hz(),
                })
            }
            _ => {}
        }
        let track = track.fit_to_len(target_len)?;
        let gain = match rms_of(track.samples()) {
            Some(r) if balance_tracks && r > 0.0 => 1.0 / r,
            _ => 1.0,
        };
        for (m, s) in mix.iter_mut().zip(track.samples()) {
            *m += gain * s;
        }
        speaker_ids.push(speaker.to_string());
        utterance_ids.push(record.utterance_id.clone());
    }
    let rms = rms_of(&mix).unwrap_or(0.0);
    if rms <= 0.0 {
        return Err(AugmentError::SilentNoise);
    }
    mix.iter_mut().for_each(|m| *m /= rms);
    Ok(Babble {
        buffer: AudioBuffer::from_parts(mix, rate.unwrap_or(PIPELINE_RATE_HZ)),
        speaker_ids,
        utterance_ids,
    })
}

/// Result of [`mix_at_snr_detailed`]. The clean component of `output` is
/// `peak_scale * signal` and the noise component is
/// `peak_scale * noise_gain * noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrMix {
    pub output: AudioBuffer,
    pub noise_gain: f64,
    /// 1.0 unless the mix clipped and was peak-normalized.
    pub peak_scale: f64,
}

pub fn mix_at_snr_detailed(
    signal: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
) -> Result<SnrMix, AugmentError> {
    if signal.sample_rate_hz() != noise.sample_rate_hz() {
        return Err(AugmentError::RateMismatch {
            expected: signal.sample_rate_hz(),
            found: noise.sample_rate_hz(),
        });
    }
    let signal_rms = rms_of(signal.samples()).unwrap_or(0.0);
    if signal_rms <= 0.0 {
        return Err(AugmentError::SilentSignal);
    }
    if noise.is_empty() {
        return Err(AugmentError::SilentNoise);
    }
    let noise = noise.fit_to_len(signal.len())?;
    let noise_rms = rms_of(noise.samples()).unwrap_or(0.0);
    if noise_rms <= 0.0 {
        return Err(AugmentError::SilentNoise);
    }
    let noise_gain = signal_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let mut mixed: Vec<f64> = signal
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(s, n)| s + noise_gain * n)
        .collect();
    let peak = mixed.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let peak_scale = if peak > 1.0 {
        CLIP_RESCUE_PEAK / peak
    } else {
        1.0
    };
    if peak_scale != 1.0 {
        mixed.iter_mut().for_each(|x| *x *= peak_scale);
    }
    Ok(SnrMix {
        output: AudioBuffer::from_parts(mixed, signal.sample_rate_hz()),
        noise_gain,
        peak_scale,
    })
}

/// Adds `noise` (looped or cut to the signal length) at `snr_db`.
pub fn mix_at_snr(
    signal: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
) -> Result<AudioBuffer, AugmentError> {
    Ok(mix_at_snr_detailed(signal, noise, snr_db)?.output)
}

/// Convolves with a room impulse response, keeps the first `signal.len()`
/// samples and restores the input RMS. A silent result is returned as is.
pub fn apply_rir(signal: &AudioBuffer, rir: &AudioBuffer) -> Result<AudioBuffer, AugmentError> {
    if signal.sample_rate_hz() != rir.sample_rate_hz() {
        return Err(AugmentError::RateMismatch {
            expected: signal.sample_rate_hz(),
            found: rir.sample_rate_hz(),
        });
    }
    if rir.is_empty() {
        return Err(AugmentError::EmptyRir);
    }
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let mut wet = fft_convolve(signal.samples(), rir.samples());
    wet.truncate(signal.len());
    let in_rms = rms_of(signal.samples()).unwrap_or(0.0);
    let out_rms = rms_of(&wet).unwrap_or(0.0);
    if out_rms > 0.0 {
        let gain = in_rms / out_rms;
        wet.iter_mut().for_each(|w| *w *= gain);
    }
    Ok(AudioBuffer::from_parts(wet, signal.sample_rate_hz()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseBranch {
    Background,
    Babble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveNoise {
    pub branch: NoiseBranch,
    pub snr_db: f64,
    /// Label of the background or pre-recorded babble source, if one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub babble_speakers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub babble_utterances: Vec<String>,
}

/// Every random draw made while augmenting one utterance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationLog {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copy: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additive: Option<AdditiveNoise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AugmentationLog {
    /// True when no augmentation was applied.
    pub fn is_empty(&self) -> bool {
        self.rir_label.is_none() && self.additive.is_none()
    }
}

/// Subdirectory names that decide the kind of each noise file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDirLayout {
    pub background: String,
    pub rir: String,
    pub babble: String,
}

impl Default for NoiseDirLayout {
    fn default() -> Self {
        Self {
            background: "noise".into(),
            rir: "rir".into(),
            babble: "babble".into(),
        }
    }
}

/// Everything an augmentation draw can pick from.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    pub background: Vec<NoiseSource>,
    pub rirs: Vec<NoiseSource>,
    /// Pre-recorded babble, used only when `babble_pool` is empty.
    pub babble_recordings: Vec<NoiseSource>,
    /// Utterances babble is synthesized from.
    pub babble_pool: Vec<UtteranceRecord>,
}

impl NoiseBank {
    pub fn from_sources(sources: Vec<NoiseSource>, babble_pool: Vec<UtteranceRecord>) -> Self {
        let mut bank = Self {
            babble_pool,
            ..Self::default()
        };
        for s in sources {
            match s.kind {
                NoiseKind::Background => bank.background.push(s),
                NoiseKind::Rir => bank.rirs.push(s),
                NoiseKind::Babble => bank.babble_recordings.push(s),
            }
        }
        bank
    }

    /// Loads `root/<layout subdir>/**/*.wav`, resampled to the pipeline rate.
    /// RIRs longer than `max_rir_len` are truncated. Missing subdirectories
    /// are skipped.
    pub fn load_dir(
        root: impl AsRef<Path>,
        layout: &NoiseDirLayout,
        max_rir_len: usize,
    ) -> Result<Vec<NoiseSource>, AugmentError> {
        let root = root.as_ref();
        let mut sources = Vec::new();
        for (kind, sub) in [
            (NoiseKind::Background, &layout.background),
            (NoiseKind::Rir, &layout.rir),
            (NoiseKind::Babble, &layout.babble),
        ] {
            let dir = root.join(sub);
            if !dir.is_dir() {
                continue;
            }
            for entry in WalkDir::new(&dir).sort_by_file_name() {
                let entry = entry.map_err(|e| AudioError::Io(e.into()))?;
                let path = entry.path();
                let is_wav = path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
                if !entry.file_type().is_file() || !is_wav {
                    continue;
                }
                let mut buffer = load_pipeline_audio(path)?;
                if kind == NoiseKind::Rir && buffer.len() > max_rir_len {
                    log::warn!("truncating RIR {} to {max_rir_len} samples", path.display());
                    let mut samples = buffer.into_samples();
                    samples.truncate(max_rir_len);
                    buffer = AudioBuffer::from_parts(samples, PIPELINE_RATE_HZ);
                }
                let label = path
                    .strip_prefix(root)
                    .unwrap_or(path)
                    .to_string_lossy()
                    .replace('\\', "/");
                sources.push(NoiseSource::new(kind, buffer, label, max_rir_len)?);
            }
        }
        Ok(sources)
    }

    fn has_babble(&self) -> bool {
        !self.babble_pool.is_empty() || !self.babble_recordings.is_empty()
    }
}

/// Applies reverberation with probability `p_reverb`, then at most one
/// additive branch: background noise with probability `p_noise`, otherwise
/// babble with probability `p_babble`. SNRs are uniform in the policy range.
///
/// Babble speakers equal to `exclude_speaker` are left out of the pool.
pub fn augment_utterance<L: AudioLoader + ?Sized, R: Rng + ?Sized>(
    buf: &AudioBuffer,
    policy: &AugmentPolicy,
    bank: &NoiseBank,
    loader: &L,
    rng: &mut R,
    exclude_speaker: Option<&str>,
) -> Result<(AudioBuffer, AugmentationLog), AugmentError> {
    policy.validate()?;
    if policy.p_reverb > 0.0 && bank.rirs.is_empty() {
        return Err(AugmentError::MissingNoise(NoiseKind::Rir));
    }
    if policy.p_noise > 0.0 && bank.background.is_empty() {
        return Err(AugmentError::MissingNoise(NoiseKind::Background));
    }
    if policy.p_babble > 0.0 && !bank.has_babble() {
        return Err(AugmentError::MissingNoise(NoiseKind::Babble));
    }

    let mut log = AugmentationLog::default();
    let mut out = buf.clone();

    if rng.random::<f64>() < policy.p_reverb {
        let rir = bank.rirs.choose(rng).expect("checked non-empty");
        out = apply_rir(&out, rir.buffer())?;
        log.rir_label = Some(rir.label().to_string());
    }

    let branch_draw = rng.random::<f64>();
    let branch = if branch_draw < policy.p_noise {
        Some(NoiseBranch::Background)
    } else if branch_draw < policy.p_noise + policy.p_babble {
        Some(NoiseBranch::Babble)
    } else {
        None
    };
    if let Some(branch) = branch {
        let snr_db = if policy.snr_db_min == policy.snr_db_max {
            policy.snr_db_min
        } else {
            rng.random_range(policy.snr_db_min..=policy.snr_db_max)
        };
        let mut record = AdditiveNoise {
            branch,
            snr_db,
            noise_label: None,
            babble_speakers: Vec::new(),
            babble_utterances: Vec::new(),
        };
        let noise = match branch {
            NoiseBranch::Background => {
                let src = bank.background.choose(rng).expect("checked non-empty");
                record.noise_label = Some(src.label().to_string());
                src.buffer().clone()
            }
            NoiseBranch::Babble if !bank.babble_pool.is_empty() => {
                let pool: Vec<UtteranceRecord> = match exclude_speaker {
                    Some(spk) => bank
                        .babble_pool
                        .iter()
                        .filter(|r| r.speaker_id != spk)
                        .cloned()
                        .collect(),
                    None => bank.babble_pool.clone(),
                };
                let n = rng.random_range(policy.babble_speakers_min..=policy.babble_speakers_max);
                let babble =
                    synth_babble(&pool, n, out.len(), rng, loader, policy.balance_babble)?;
                record.babble_speakers = babble.speaker_ids;
                record.babble_utterances = babble.utterance_ids;
                babble.buffer
            }
            NoiseBranch::Babble => {
                let src = bank
                    .babble_recordings
                    .choose(rng)
                    .expect("checked non-empty");
                record.noise_label = Some(src.label().to_string());
                src.buffer().clone()
            }
        };
        out = mix_at_snr(&out, &noise, snr_db)?;
        log.additive = Some(record);
    }
    Ok((out, log))
}

/// Binds a policy, noise bank and loader for per-record augmentation with
/// seeds derived from (policy seed, epoch, utterance id, copy).
pub struct Augmenter<'a, L: AudioLoader + ?Sized> {
    pub policy: &'a AugmentPolicy,
    pub bank: &'a NoiseBank,
    pub loader: &'a L,
}

impl<L: AudioLoader + ?Sized> Augmenter<'_, L> {
    pub fn rng_for(&self, record: &UtteranceRecord, epoch: u64, copy: u64) -> (u64, SeededRng) {
        let seed = utterance_seed(self.policy.seed, epoch, &record.utterance_id, copy);
        (seed, rng_from_seed(seed))
    }

    pub fn augment_record(
        &self,
        record: &UtteranceRecord,
        epoch: u64,
        copy: u64,
    ) -> Result<(AudioBuffer, AugmentationLog), AugmentError> {
        let clean = self.loader.load(record)?;
        self.augment_buffer(&clean, record, epoch, copy)
    }

    pub fn augment_buffer(
        &self,
        clean: &AudioBuffer,
        record: &UtteranceRecord,
        epoch: u64,
        copy: u64,
    ) -> Result<(AudioBuffer, AugmentationLog), AugmentError> {
        let (seed, mut rng) = self.rng_for(record, epoch, copy);
        let (out, mut log) = augment_utterance(
            clean,
            self.policy,
            self.bank,
            self.loader,
            &mut rng,
            Some(&record.speaker_id),
        )?;
        log.utterance_id = Some(record.utterance_id.clone());
        log.seed = Some(seed);
        log.epoch = Some(epoch);
        log.copy = Some(copy);
        Ok((out, log))
    }
}
