//! Audio buffers, WAV I/O, f0 tracking and the prosody transforms.
//!
//! Time-stretching uses a phase vocoder with identity phase locking
//! (Hann window, N = 1024, synthesis hop 256). The analysis hop follows the
//! local stretch ratio, so a ratio of 2 doubles the local duration. Pitch
//! shifting stretches by 2^(cents/1200) and then reads the stretched signal
//! back through the vocoder's time map, which resamples it to the original
//! duration.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::stimgen::{BreakpointProfile, ProfileKind};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;
pub const FRAME_SIZE: usize = 1024;
pub const SYNTHESIS_HOP: usize = 256;

/// One 16-bit quantization step.
pub const LSB: f64 = 1.0 / 32768.0;

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
pub const F0_FRAME_S: f64 = 0.040;
pub const F0_HOP_S: f64 = 0.010;
pub const VOICING_THRESHOLD: f64 = 0.45;
/// Frames quieter than this RMS are unvoiced without further analysis.
const F0_SILENCE_RMS: f64 = 1e-4;

/// Level below which trailing audio counts as silence for `insert_word`.
pub const SPEECH_END_DBFS: f64 = -50.0;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("audio buffer is empty")]
    Empty,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    BadSampleRate,
    #[error("expected a {expected} profile, got {got}")]
    WrongProfileKind { expected: &'static str, got: &'static str },
    #[error("no voiced frames")]
    NoVoicedFrames,
    #[error("target frequency {0} Hz is outside the tracker range")]
    BadTarget(f64),
    #[error("gap must be finite and >= 0, got {0}")]
    BadGap(f64),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("wav: {0}")]
    Wav(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<hound::Error> for DspError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => DspError::Io(io),
            hound::Error::Unsupported => {
                DspError::Wav("unsupported fmt chunk: only 16/24/32-bit PCM and 32-bit float are read".into())
            }
            hound::Error::FormatError(m) => DspError::Wav(format!("malformed file: {m}")),
            other => DspError::Wav(other.to_string()),
        }
    }
}

/// Mono audio with nominal sample range [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::BadSampleRate);
        }
        if samples.is_empty() {
            return Err(DspError::Empty);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sine tone, mostly for tests and examples.
    pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64, sample_rate: u32) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        let sr = sample_rate as f64;
        let samples = (0..n)
            .map(|i| amplitude * (TAU * freq_hz * i as f64 / sr).sin())
            .collect();
        AudioBuffer { samples, sample_rate }
    }

    pub fn silence(duration_s: f64, sample_rate: u32) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        AudioBuffer {
            samples: vec![0.0; n],
            sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, DspError> {
    let reader = hound::WavReader::open(path)?;
    decode_wav(reader)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer, DspError> {
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes))?;
    decode_wav(reader)
}

fn decode_wav<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<AudioBuffer, DspError> {
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(DspError::Wav(format!(
                "unsupported fmt chunk: {bits}-bit {fmt:?} samples"
            )))
        }
    };
    let channels = spec.channels as usize;
    let samples = match channels {
        0 => return Err(DspError::Wav("fmt chunk declares zero channels".into())),
        1 => interleaved,
        c => {
            warn!("downmixing {c}-channel audio to mono by averaging");
            interleaved
                .chunks_exact(c)
                .map(|fr| fr.iter().sum::<f64>() / c as f64)
                .collect()
        }
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(audio: &AudioBuffer, path: impl AsRef<Path>, format: WavFormat) -> Result<(), DspError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_wav(audio, file, format)
}

pub fn wav_bytes(audio: &AudioBuffer, format: WavFormat) -> Result<Vec<u8>, DspError> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    encode_wav(audio, &mut cursor, format)?;
    Ok(cursor.into_inner())
}

fn encode_wav<W: std::io::Write + std::io::Seek>(
    audio: &AudioBuffer,
    sink: W,
    format: WavFormat,
) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::new(sink, spec)?;
    for &s in &audio.samples {
        match format {
            WavFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)?;
            }
            WavFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Frame-level f0 estimates; `None` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub frames: Vec<(f64, Option<f64>)>,
    pub frame_hop_s: f64,
}

impl PitchTrack {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().filter_map(|&(_, f)| f)
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced().count()
    }
}

/// Normalized cross-correlation tracker.
///
/// Frames are 40 ms long with a 10 ms hop; frame `i` starts at sample
/// `i * hop` and is stamped at its centre. For each lag in the 50-600 Hz
/// range the frame is correlated with the signal `lag` samples later. A
/// frame is voiced when the best correlation reaches 0.45; the period is
/// the smallest-lag local maximum within 90% of the best, refined by
/// parabolic interpolation.
pub fn track_f0(audio: &AudioBuffer) -> PitchTrack {
    let sr = audio.sample_rate as f64;
    let x = &audio.samples;
    let w = ((F0_FRAME_S * sr).round() as usize).max(2);
    let hop = ((F0_HOP_S * sr).round() as usize).max(1);
    let min_lag = ((sr / F0_MAX_HZ).floor() as usize).max(2);
    let max_lag = (sr / F0_MIN_HZ).ceil() as usize;
    let at = |i: usize| x.get(i).copied().unwrap_or(0.0);

    let mut frames = Vec::new();
    let mut start = 0usize;
    while start + w <= x.len().max(w) && start < x.len() {
        let t = (start as f64 + w as f64 / 2.0) / sr;
        frames.push((t, frame_f0(&at, start, w, min_lag, max_lag, sr)));
        start += hop;
        if start + w > x.len() {
            break;
        }
    }
    PitchTrack {
        frames,
        frame_hop_s: hop as f64 / sr,
    }
}

fn frame_f0(
    at: &impl Fn(usize) -> f64,
    start: usize,
    w: usize,
    min_lag: usize,
    max_lag: usize,
    sr: f64,
) -> Option<f64> {
    let e0: f64 = (0..w).map(|n| at(start + n).powi(2)).sum();
    if (e0 / w as f64).sqrt() < F0_SILENCE_RMS {
        return None;
    }
    // correlation for lags min_lag-1 ..= max_lag+1 so every candidate has
    // both neighbours
    let lo = min_lag - 1;
    let hi = max_lag + 1;
    let mut r = vec![0.0; hi - lo + 1];
    let mut e_lag: f64 = (0..w).map(|n| at(start + lo + n).powi(2)).sum();
    for (k, lag) in (lo..=hi).enumerate() {
        if k > 0 {
            e_lag += at(start + lag + w - 1).powi(2) - at(start + lag - 1).powi(2);
        }
        let num: f64 = (0..w).map(|n| at(start + n) * at(start + n + lag)).sum();
        let den = (e0 * e_lag.max(0.0)).sqrt();
        r[k] = if den > 0.0 { num / den } else { 0.0 };
    }
    let cand = 1..r.len() - 1;
    let gmax = cand.clone().map(|k| r[k]).fold(f64::NEG_INFINITY, f64::max);
    if gmax < VOICING_THRESHOLD {
        return None;
    }
    let k = cand
        .clone()
        .find(|&k| r[k] >= 0.9 * gmax && r[k] >= r[k - 1] && r[k] > r[k + 1])
        .or_else(|| cand.clone().find(|&k| r[k] == gmax))?;
    let (a, b, c) = (r[k - 1], r[k], r[k + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (lo + k) as f64 + offset;
    Some((sr / lag).clamp(F0_MIN_HZ, F0_MAX_HZ))
}

/// Analysis-centre to synthesis-centre correspondence, in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMap {
    pub points: Vec<(f64, f64)>,
}

impl TimeMap {
    /// Output position for input position `t`, extrapolating linearly past
    /// either end.
    pub fn forward(&self, t: f64) -> f64 {
        let p = &self.points;
        if p.len() == 1 {
            return p[0].1 + (t - p[0].0);
        }
        let hi = p.partition_point(|&(a, _)| a <= t).clamp(1, p.len() - 1);
        let (a0, s0) = p[hi - 1];
        let (a1, s1) = p[hi];
        if a1 == a0 {
            return s1;
        }
        s0 + (s1 - s0) * (t - a0) / (a1 - a0)
    }
}

struct Vocoder {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Vocoder {
    fn new() -> Self {
        let mut planner = FftPlanner::new();
        let window = (0..FRAME_SIZE)
            .map(|n| 0.5 - 0.5 * (TAU * n as f64 / FRAME_SIZE as f64).cos())
            .collect();
        Vocoder {
            fwd: planner.plan_fft_forward(FRAME_SIZE),
            inv: planner.plan_fft_inverse(FRAME_SIZE),
            window,
        }
    }

    /// Stretches `x` so that the neighbourhood of input sample `n` lasts
    /// `ratio(n)` times as long. Returns the output and its time map.
    fn run(&self, x: &[f64], out_len: usize, ratio: impl Fn(f64) -> f64) -> (Vec<f64>, TimeMap) {
        let n = FRAME_SIZE;
        let half = n / 2;
        let hs = SYNTHESIS_HOP as f64;
        let bins = half + 1;
        // input sample at absolute index i of the centred frame grid
        let sample = |i: isize| -> f64 {
            if i < 0 {
                0.0
            } else {
                x.get(i as usize).copied().unwrap_or(0.0)
            }
        };

        let mut centres: Vec<isize> = Vec::new();
        let mut pos = 0.0f64;
        loop {
            let c = pos.round() as isize;
            centres.push(c);
            let k = centres.len();
            if c > x.len() as isize && (k - 1) * SYNTHESIS_HOP > out_len + half {
                break;
            }
            let r = ratio(pos.min(x.len().saturating_sub(1) as f64)).max(1e-3);
            pos += hs / r;
        }

        let total = centres.len() * SYNTHESIS_HOP + n;
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut prev_phase = vec![0.0; bins];
        let mut synth_phase = vec![0.0; bins];
        let mut mag = vec![0.0; bins];
        let mut phase = vec![0.0; bins];
        let mut new_phase = vec![0.0; bins];

        for (k, &c) in centres.iter().enumerate() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(sample(c - half as isize + j as isize) * self.window[j], 0.0);
            }
            self.fwd.process(&mut buf);
            for j in 0..bins {
                mag[j] = buf[j].norm();
                phase[j] = buf[j].arg();
            }
            if k == 0 {
                new_phase.copy_from_slice(&phase);
            } else {
                let ha = (c - centres[k - 1]) as f64;
                let peaks = find_peaks(&mag);
                if peaks.is_empty() {
                    new_phase.copy_from_slice(&phase);
                } else {
                    for (pi, &p) in peaks.iter().enumerate() {
                        let omega = TAU * p as f64 / n as f64;
                        let inst = if ha > 0.0 {
                            omega + princarg(phase[p] - prev_phase[p] - omega * ha) / ha
                        } else {
                            omega
                        };
                        let theta = synth_phase[p] + inst * hs;
                        let lo = if pi == 0 { 0 } else { (peaks[pi - 1] + p) / 2 + 1 };
                        let hi = if pi + 1 == peaks.len() { bins - 1 } else { (p + peaks[pi + 1]) / 2 };
                        for j in lo..=hi {
                            new_phase[j] = theta + phase[j] - phase[p];
                        }
                    }
                }
            }
            prev_phase.copy_from_slice(&phase);
            synth_phase.copy_from_slice(&new_phase);

            for j in 0..bins {
                buf[j] = Complex::from_polar(mag[j], new_phase[j]);
            }
            for j in 1..half {
                buf[n - j] = buf[j].conj();
            }
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            self.inv.process(&mut buf);
            let base = k * SYNTHESIS_HOP;
            for j in 0..n {
                let w = self.window[j];
                out[base + j] += buf[j].re / n as f64 * w;
                norm[base + j] += w * w;
            }
        }

        let y: Vec<f64> = (0..out_len)
            .map(|i| {
                let idx = i + half;
                if norm[idx] > 1e-3 {
                    out[idx] / norm[idx]
                } else {
                    0.0
                }
            })
            .collect();
        let map = TimeMap {
            points: centres
                .iter()
                .enumerate()
                .map(|(k, &c)| (c as f64, (k * SYNTHESIS_HOP) as f64))
                .collect(),
        };
        (y, map)
    }
}

fn princarg(p: f64) -> f64 {
    p - TAU * ((p + PI) / TAU).floor()
}

/// Bins that exceed both neighbours on each side.
fn find_peaks(mag: &[f64]) -> Vec<usize> {
    let m = mag.len();
    let floor = mag.iter().cloned().fold(0.0, f64::max) * 1e-9;
    (0..m)
        .filter(|&j| {
            let v = mag[j];
            v > floor
                && (j < 1 || v > mag[j - 1])
                && (j < 2 || v > mag[j - 2])
                && (j + 1 >= m || v >= mag[j + 1])
                && (j + 2 >= m || v >= mag[j + 2])
        })
        .collect()
}

fn require_kind(profile: &BreakpointProfile, kind: ProfileKind) -> Result<(), DspError> {
    if profile.kind() != kind {
        return Err(DspError::WrongProfileKind {
            expected: kind.as_str(),
            got: profile.kind().as_str(),
        });
    }
    Ok(())
}

fn stretched_length(len: usize, sr: f64, ratio: &impl Fn(f64) -> f64) -> usize {
    let total: f64 = (0..len).map(|i| ratio(i as f64 / sr)).sum();
    (total.round() as usize).max(1)
}

/// Time-stretch without changing pitch. The output lasts
/// round(Σ ratio(t_n)) samples.
pub fn time_stretch(audio: &AudioBuffer, profile: &BreakpointProfile) -> Result<AudioBuffer, DspError> {
    require_kind(profile, ProfileKind::StretchRatio)?;
    let (y, _) = stretch_with_map(audio, |t| profile.value_at(t))?;
    AudioBuffer::new(y, audio.sample_rate)
}

fn stretch_with_map(audio: &AudioBuffer, ratio: impl Fn(f64) -> f64) -> Result<(Vec<f64>, TimeMap), DspError> {
    if audio.is_empty() {
        return Err(DspError::Empty);
    }
    let sr = audio.sample_rate as f64;
    let out_len = stretched_length(audio.len(), sr, &ratio);
    Ok(Vocoder::new().run(&audio.samples, out_len, |n| ratio(n / sr)))
}

/// Shift pitch by the profile's cents at each input time; duration is kept.
pub fn pitch_shift(audio: &AudioBuffer, profile: &BreakpointProfile) -> Result<AudioBuffer, DspError> {
    require_kind(profile, ProfileKind::PitchCents)?;
    let factor = |t: f64| (profile.value_at(t) / 1200.0).exp2();
    let (z, map) = stretch_with_map(audio, factor)?;
    let y = (0..audio.len())
        .map(|n| read_linear(&z, map.forward(n as f64)))
        .collect();
    AudioBuffer::new(y, audio.sample_rate)
}

fn read_linear(z: &[f64], pos: f64) -> f64 {
    if pos < 0.0 || !pos.is_finite() {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let a = z.get(i).copied().unwrap_or(0.0);
    let b = z.get(i + 1).copied().unwrap_or(0.0);
    a + (b - a) * frac
}

/// Pitch first, then duration.
pub fn apply_profiles(
    audio: &AudioBuffer,
    pitch: Option<&BreakpointProfile>,
    stretch: Option<&BreakpointProfile>,
) -> Result<AudioBuffer, DspError> {
    let mut out = audio.clone();
    if let Some(p) = pitch {
        out = pitch_shift(&out, p)?;
    }
    if let Some(s) = stretch {
        out = time_stretch(&out, s)?;
    }
    Ok(out)
}

/// Moves every voiced frame to `target_hz`. Unvoiced frames get a 0-cent
/// breakpoint and are left at their original pitch.
pub fn flatten_pitch(audio: &AudioBuffer, target_hz: f64) -> Result<AudioBuffer, DspError> {
    if !(F0_MIN_HZ..=F0_MAX_HZ).contains(&target_hz) {
        return Err(DspError::BadTarget(target_hz));
    }
    let profile = flatten_profile(&track_f0(audio), target_hz)?;
    pitch_shift(audio, &profile)
}

/// Cents-per-frame profile that moves a tracked contour to `target_hz`.
pub fn flatten_profile(track: &PitchTrack, target_hz: f64) -> Result<BreakpointProfile, DspError> {
    if track.voiced_count() == 0 {
        return Err(DspError::NoVoicedFrames);
    }
    let cents = |f: Option<f64>| f.map_or(0.0, |f0| 1200.0 * (target_hz / f0).log2());
    let mut points = Vec::with_capacity(track.frames.len() + 1);
    if track.frames[0].0 > 0.0 {
        points.push((0.0, cents(track.frames[0].1)));
    }
    points.extend(track.frames.iter().map(|&(t, f)| (t, cents(f))));
    Ok(BreakpointProfile::new(ProfileKind::PitchCents, points).expect("frame times increase"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub audio: AudioBuffer,
    /// Index of the first word sample in the output.
    pub splice_index: usize,
}

/// Appends `word` after the phrase's speech end plus `gap_s`.
///
/// The speech end is one past the last sample above -50 dBFS. The splice
/// lands at the first zero crossing at or after the target: the crossing
/// sample closest to zero is set to exactly 0 and the word starts right
/// after it. The word itself is trimmed to its own first zero crossing when
/// its first sample is not already within one LSB of zero. The phrase is
/// zero-padded when the target falls past its end.
pub fn insert_word(phrase: &AudioBuffer, word: &AudioBuffer, gap_s: f64) -> Result<Insertion, DspError> {
    if !(gap_s >= 0.0 && gap_s.is_finite()) {
        return Err(DspError::BadGap(gap_s));
    }
    if phrase.sample_rate != word.sample_rate {
        return Err(DspError::RateMismatch(phrase.sample_rate, word.sample_rate));
    }
    let sr = phrase.sample_rate as f64;
    let thresh = 10f64.powf(SPEECH_END_DBFS / 20.0);
    let speech_end = phrase
        .samples
        .iter()
        .rposition(|s| s.abs() > thresh)
        .map_or(0, |i| i + 1);
    let target = speech_end + (gap_s * sr).round() as usize;

    let mut head = phrase.samples.clone();
    if head.len() <= target {
        head.resize(target + 1, 0.0);
    }
    let z = match first_zero_crossing(&head, target) {
        Some(z) => z,
        None => {
            warn!("no zero crossing after the splice target; splicing at the quietest sample");
            quietest(&head, target)
        }
    };
    head.truncate(z + 1);
    head[z] = 0.0;

    let mut tail = word.samples.clone();
    if tail[0].abs() > LSB {
        let w = match first_zero_crossing(&tail, 0) {
            Some(w) => w,
            None => {
                warn!("word has no zero crossing; trimming at its quietest sample");
                quietest(&tail, 0)
            }
        };
        tail.drain(..w);
        tail[0] = 0.0;
    }
    let splice_index = head.len();
    head.extend_from_slice(&tail);
    Ok(Insertion {
        audio: AudioBuffer::new(head, phrase.sample_rate)?,
        splice_index,
    })
}

/// First index at or after `from` that sits within one LSB of zero or
/// brackets a sign change; in the latter case the smaller of the pair.
fn first_zero_crossing(x: &[f64], from: usize) -> Option<usize> {
    for i in from..x.len() {
        if x[i].abs() <= LSB {
            return Some(i);
        }
        if i + 1 < x.len() && x[i].signum() != x[i + 1].signum() {
            return Some(if x[i].abs() <= x[i + 1].abs() { i } else { i + 1 });
        }
    }
    None
}

fn quietest(x: &[f64], from: usize) -> usize {
    (from..x.len())
        .min_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
        .unwrap_or(x.len() - 1)
}
