//! Audio buffers, WAV I/O, band-limited resampling and power measurements.
//!
//! Every DSP stage in the crate consumes and produces [`AudioBuffer`]s: mono,
//! `f64` samples with a nominal range of `[-1, 1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Sample rate every pipeline stage normalizes to.
pub const PIPELINE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("sample rate must be positive")]
    InvalidSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Internal constructor for DSP results already known to be finite.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(sample_rate_hz > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_parts(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate_hz,
        )
    }

    /// Loops (or truncates) the buffer to exactly `len` samples.
    pub fn fit_to_len(&self, len: usize) -> Result<Self, AudioError> {
        if self.samples.is_empty() {
            return Err(AudioError::EmptyBuffer);
        }
        let samples = self.samples.iter().copied().cycle().take(len).collect();
        Ok(Self::from_parts(samples, self.sample_rate_hz))
    }
}

/// Root-mean-square amplitude.
pub fn rms_power(buf: &AudioBuffer) -> Result<f64, AudioError> {
    rms_of(buf.samples()).ok_or(AudioError::EmptyBuffer)
}

pub(crate) fn rms_of(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let energy: f64 = samples.iter().map(|s| s * s).sum();
    Some((energy / samples.len() as f64).sqrt())
}

/// On-disk sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Float32,
    Int16,
}

/// Reads a 16-bit integer or 32-bit float WAV file, averaging channels to mono.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(unsupported(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (format, bits) => {
            return Err(unsupported(
                path,
                &format!("{bits}-bit {format:?} samples"),
            ))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Header-only probe: returns (duration in seconds, sample rate).
pub fn probe_duration(path: impl AsRef<Path>) -> Result<(f64, u32), AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::MissingFile(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let rate = reader.spec().sample_rate;
    if rate == 0 {
        return Err(AudioError::InvalidSampleRate);
    }
    Ok((f64::from(reader.duration()) / f64::from(rate), rate))
}

/// Writes a mono WAV file at the buffer's sample rate.
pub fn write_wav(
    buf: &AudioBuffer,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate_hz(),
        bits_per_sample: match encoding {
            WavEncoding::Float32 => 32,
            WavEncoding::Int16 => 16,
        },
        sample_format: match encoding {
            WavEncoding::Float32 => hound::SampleFormat::Float,
            WavEncoding::Int16 => hound::SampleFormat::Int,
        },
    };
    let file = BufWriter::new(File::create(path)?);
    let mut writer = hound::WavWriter::new(file, spec).map_err(|e| wav_error(path, e))?;
    for &s in buf.samples() {
        let res = match encoding {
            WavEncoding::Float32 => writer.write_sample(s as f32),
            WavEncoding::Int16 => {
                writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
        };
        res.map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) => unsupported(path, msg),
        hound::Error::Unsupported => unsupported(path, "non-PCM encoding"),
        other => AudioError::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

fn unsupported(path: &Path, reason: &str) -> AudioError {
    AudioError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Windowed-sinc filter design parameters for [`Resampler`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleQuality {
    /// Sinc zero crossings on each side of the kernel centre.
    pub zero_crossings: usize,
    pub kaiser_beta: f64,
    /// Passband edge as a fraction of the lower Nyquist frequency.
    pub rolloff: f64,
}

impl Default for ResampleQuality {
    fn default() -> Self {
        Self {
            zero_crossings: 32,
            kaiser_beta: 8.6,
            rolloff: 0.95,
        }
    }
}

// Above this many phases the kernel is evaluated per output sample instead of tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

/// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
#[derive(Debug, Clone)]
pub struct Resampler {
    from_hz: u32,
    to_hz: u32,
    up: u64,
    down: u64,
    cutoff: f64,
    half_width: f64,
    reach: i64,
    quality: ResampleQuality,
    table: Option<Vec<Vec<f64>>>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32, quality: ResampleQuality) -> Result<Self, AudioError> {
        if from_hz == 0 || to_hz == 0 {
            return Err(AudioError::InvalidSampleRate);
        }
        let g = gcd(u64::from(from_hz), u64::from(to_hz));
        let up = u64::from(to_hz) / g;
        let down = u64::from(from_hz) / g;
        let cutoff = quality.rolloff * (up as f64 / down as f64).min(1.0);
        let half_width = quality.zero_crossings as f64 / cutoff;
        let reach = half_width.ceil() as i64;
        let mut resampler = Self {
            from_hz,
            to_hz,
            up,
            down,
            cutoff,
            half_width,
            reach,
            quality,
            table: None,
        };
        if up <= MAX_TABLE_PHASES {
            let table = (0..up).map(|p| resampler.phase_taps(p)).collect();
            resampler.table = Some(table);
        }
        Ok(resampler)
    }

    pub fn from_hz(&self) -> u32 {
        self.from_hz
    }

    pub fn to_hz(&self) -> u32 {
        self.to_hz
    }

    /// Taps for input offsets `-reach..=reach` around the integer base position,
    /// normalized to unit DC gain.
    fn phase_taps(&self, phase: u64) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let mut taps: Vec<f64> = (-self.reach..=self.reach)
            .map(|j| self.kernel(frac - j as f64))
            .collect();
        let sum: f64 = taps.iter().sum();
        if sum.abs() > f64::EPSILON {
            taps.iter_mut().for_each(|t| *t /= sum);
        }
        taps
    }

    fn kernel(&self, t: f64) -> f64 {
        if t.abs() >= self.half_width {
            return 0.0;
        }
        let x = self.cutoff * t;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            let px = std::f64::consts::PI * x;
            px.sin() / px
        };
        let r = t / self.half_width;
        let beta = self.quality.kaiser_beta;
        let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
        self.cutoff * sinc * window
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let num = input_len as u128 * u128::from(self.up);
        let den = u128::from(self.down);
        ((num + den / 2) / den) as usize
    }

    pub fn process(&self, buf: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
        if buf.sample_rate_hz() != self.from_hz {
            return Err(AudioError::UnsupportedFormat {
                path: PathBuf::new(),
                reason: format!(
                    "resampler built for {} Hz, got {} Hz",
                    self.from_hz,
                    buf.sample_rate_hz()
                ),
            });
        }
        if self.up == self.down {
            return Ok(buf.clone());
        }
        let x = buf.samples();
        let n_in = x.len() as i64;
        let n_out = self.output_len(x.len());
        let mut out = Vec::with_capacity(n_out);
        let mut scratch: Vec<f64>;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let taps: &[f64] = match &self.table {
                Some(table) => &table[phase as usize],
                None => {
                    scratch = self.phase_taps(phase);
                    &scratch
                }
            };
            let mut acc = 0.0;
            for (i, tap) in taps.iter().enumerate() {
                let k = base + i as i64 - self.reach;
                if (0..n_in).contains(&k) {
                    acc += tap * x[k as usize];
                }
            }
            out.push(acc);
        }
        Ok(AudioBuffer::from_parts(out, self.to_hz))
    }
}

/// Resamples with the default quality. Identity when the rates already match.
pub fn resample(buf: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidSampleRate);
    }
    if buf.sample_rate_hz() == target_hz {
        return Ok(buf.clone());
    }
    Resampler::new(buf.sample_rate_hz(), target_hz, ResampleQuality::default())?.process(buf)
}

/// Loads a WAV file and brings it to the pipeline rate.
pub fn load_pipeline_audio(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    resample(&load_audio(path)?, PIPELINE_RATE_HZ)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}
