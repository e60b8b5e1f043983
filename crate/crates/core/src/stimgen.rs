//! Reverse-correlation stimulus randomization.
//!
//! Each trial perturbs a base stimulus with two independent breakpoint
//! profiles laid on a grid of fixed-length windows anchored at t = 0: a
//! pitch profile in cents and a local time-stretch profile as a ratio.
//! Values are drawn per window from a clipped normal and linearly
//! interpolated between window starts.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SeededRng};

/// Stream index reserved for the trial-order shuffle.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile needs at least one breakpoint")]
    Empty,
    #[error("breakpoint times must start at 0 and increase strictly (index {0})")]
    BadTimes(usize),
    #[error("non-finite breakpoint value at index {0}")]
    NonFinite(usize),
    #[error("stretch ratios must be positive (index {0})")]
    NonPositiveRatio(usize),
    #[error("mixed profile kinds in one file")]
    MixedKinds,
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("invalid randomizer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    PitchCents,
    StretchRatio,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::PitchCents => "pitch_cents",
            ProfileKind::StretchRatio => "stretch_ratio",
        }
    }

    /// Value that leaves audio unchanged.
    pub fn neutral(self) -> f64 {
        match self {
            ProfileKind::PitchCents => 0.0,
            ProfileKind::StretchRatio => 1.0,
        }
    }
}

impl FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pitch_cents" | "pitch" => Ok(ProfileKind::PitchCents),
            "stretch_ratio" | "stretch" => Ok(ProfileKind::StretchRatio),
            other => Err(format!("unknown profile kind {other:?}")),
        }
    }
}

/// Piecewise-linear time → value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointProfile {
    kind: ProfileKind,
    breakpoints: Vec<(f64, f64)>,
}

impl BreakpointProfile {
    pub fn new(kind: ProfileKind, breakpoints: Vec<(f64, f64)>) -> Result<Self, ProfileError> {
        if breakpoints.is_empty() {
            return Err(ProfileError::Empty);
        }
        for (i, &(t, v)) in breakpoints.iter().enumerate() {
            let ok = if i == 0 { t == 0.0 } else { t > breakpoints[i - 1].0 && t.is_finite() };
            if !ok {
                return Err(ProfileError::BadTimes(i));
            }
            if !v.is_finite() {
                return Err(ProfileError::NonFinite(i));
            }
            if kind == ProfileKind::StretchRatio && v <= 0.0 {
                return Err(ProfileError::NonPositiveRatio(i));
            }
        }
        Ok(BreakpointProfile { kind, breakpoints })
    }

    /// A single-breakpoint profile holding `value` everywhere.
    pub fn constant(kind: ProfileKind, value: f64) -> Result<Self, ProfileError> {
        Self::new(kind, vec![(0.0, value)])
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn values(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|&(_, v)| v).collect()
    }

    /// Linear between breakpoints, constant beyond the last one.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate_profile(self, t)
    }

    /// `kind,time_s,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,time_s,value\n");
        for &(t, v) in &self.breakpoints {
            let _ = writeln!(out, "{},{t},{v}", self.kind.as_str());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ProfileError> {
        let mut kind = None;
        let mut points = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("kind")) {
                continue;
            }
            let csv_err = |reason: String| ProfileError::Csv {
                line: idx + 1,
                reason,
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(csv_err(format!("expected 3 columns, got {}", cols.len())));
            }
            let k = ProfileKind::from_str(cols[0]).map_err(csv_err)?;
            if *kind.get_or_insert(k) != k {
                return Err(ProfileError::MixedKinds);
            }
            let t: f64 = cols[1].parse().map_err(|e| csv_err(format!("time: {e}")))?;
            let v: f64 = cols[2].parse().map_err(|e| csv_err(format!("value: {e}")))?;
            points.push((t, v));
        }
        let kind = kind.ok_or(ProfileError::Empty)?;
        Self::new(kind, points)
    }
}

pub fn interpolate_profile(profile: &BreakpointProfile, t: f64) -> f64 {
    let bp = &profile.breakpoints;
    if t <= bp[0].0 {
        return bp[0].1;
    }
    // index of the first breakpoint strictly after t
    let hi = bp.partition_point(|&(bt, _)| bt <= t);
    if hi >= bp.len() {
        return bp[bp.len() - 1].1;
    }
    let (t0, v0) = bp[hi - 1];
    let (t1, v1) = bp[hi];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// How stretch deviates map to ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StretchDomain {
    /// ratio = 2^g, g ~ N(0, σ) clipped at ±clip·σ.
    #[default]
    Log2,
    /// ratio = 1 + g, g ~ N(0, σ) clipped at ±clip·σ, then floored at
    /// [`LINEAR_STRETCH_FLOOR`]. For sensitivity studies only.
    Linear,
}

pub const LINEAR_STRETCH_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizerConfig {
    pub window_s: f64,
    pub n_windows: usize,
    pub pitch_sigma_cents: f64,
    pub stretch_sigma_log2: f64,
    pub clip_sigmas: f64,
    pub seed: u64,
    #[serde(default)]
    pub stretch_domain: StretchDomain,
}

impl Default for RandomizerConfig {
    fn default() -> Self {
        RandomizerConfig {
            window_s: 0.1,
            n_windows: Self::WORD_WINDOWS,
            pitch_sigma_cents: 100.0,
            stretch_sigma_log2: 1.0,
            clip_sigmas: 2.0,
            seed: 0,
            stretch_domain: StretchDomain::Log2,
        }
    }
}

impl RandomizerConfig {
    pub const WORD_WINDOWS: usize = 4;
    pub const PHRASE_WINDOWS: usize = 13;

    pub fn word(seed: u64) -> Self {
        RandomizerConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn phrase(seed: u64) -> Self {
        RandomizerConfig {
            n_windows: Self::PHRASE_WINDOWS,
            seed,
            ..Default::default()
        }
    }

    /// Enough windows to cover `duration_s`; a trailing partial window gets
    /// its own breakpoint.
    pub fn windows_for_duration(&self, duration_s: f64) -> usize {
        ((duration_s / self.window_s) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |m: &str| Err(ProfileError::Config(m.to_string()));
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return bad("window_s must be > 0");
        }
        if self.n_windows == 0 {
            return bad("n_windows must be >= 1");
        }
        if !(self.pitch_sigma_cents > 0.0 && self.stretch_sigma_log2 > 0.0) {
            return bad("sigmas must be > 0");
        }
        if self.clip_sigmas.is_nan() || self.clip_sigmas <= 0.0 {
            return bad("clip_sigmas must be > 0");
        }
        Ok(())
    }

    pub fn pitch_bounds(&self) -> (f64, f64) {
        let c = self.clip_sigmas * self.pitch_sigma_cents;
        (-c, c)
    }

    pub fn stretch_bounds(&self) -> (f64, f64) {
        let c = self.clip_sigmas * self.stretch_sigma_log2;
        match self.stretch_domain {
            StretchDomain::Log2 => (2f64.powf(-c), 2f64.powf(c)),
            StretchDomain::Linear => ((1.0 - c).max(LINEAR_STRETCH_FLOOR), 1.0 + c),
        }
    }

    /// Maps a stretch deviate `g` to a ratio, clipping at ±clip·σ.
    pub fn stretch_ratio(&self, g: f64) -> f64 {
        let c = self.clip_sigmas * self.stretch_sigma_log2;
        let g = g.clamp(-c, c);
        match self.stretch_domain {
            StretchDomain::Log2 => g.exp2(),
            StretchDomain::Linear => (1.0 + g).max(LINEAR_STRETCH_FLOOR),
        }
    }

    pub fn pitch_cents(&self, z: f64) -> f64 {
        let (lo, hi) = self.pitch_bounds();
        (z * self.pitch_sigma_cents).clamp(lo, hi)
    }
}

/// Draws a pitch and a stretch profile from `rng`; pitch values are drawn
/// first for every window, then stretch values.
pub fn sample_profiles_with<R: RngCore + ?Sized>(
    config: &RandomizerConfig,
    rng: &mut R,
) -> (BreakpointProfile, BreakpointProfile) {
    let times: Vec<f64> = (0..config.n_windows).map(|i| i as f64 * config.window_s).collect();
    let pitch: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| (t, config.pitch_cents(rng::standard_normal(rng))))
        .collect();
    let stretch: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let g = rng::standard_normal(rng) * config.stretch_sigma_log2;
            (t, config.stretch_ratio(g))
        })
        .collect();
    (
        BreakpointProfile {
            kind: ProfileKind::PitchCents,
            breakpoints: pitch,
        },
        BreakpointProfile {
            kind: ProfileKind::StretchRatio,
            breakpoints: stretch,
        },
    )
}

/// Profiles from the config's own seed.
pub fn sample_profiles(
    config: &RandomizerConfig,
) -> Result<(BreakpointProfile, BreakpointProfile), ProfileError> {
    config.validate()?;
    let mut rng = rng::seeded(config.seed);
    Ok(sample_profiles_with(config, &mut rng))
}

/// A stimulus shared by many trials, with its two response alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseStimulus {
    pub id: String,
    pub alternatives: (String, String),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub base_stimulus_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_profile: Option<BreakpointProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stretch_profile: Option<BreakpointProfile>,
    /// On-screen order of the two alternatives.
    pub option_order: (String, String),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_audio_path: Option<String>,
}

impl TrialSpec {
    pub fn offers(&self, word: &str) -> bool {
        self.option_order.0 == word || self.option_order.1 == word
    }
}

/// Trial `i` uses base stimulus `i mod len` and its own ChaCha substream,
/// so any single trial can be regenerated in isolation. The final list is
/// shuffled with a dedicated substream.
pub fn make_trial_batch(
    base_stimuli: &[BaseStimulus],
    n_trials: usize,
    config: &RandomizerConfig,
) -> Result<Vec<TrialSpec>, ProfileError> {
    config.validate()?;
    if base_stimuli.is_empty() {
        return Err(ProfileError::Config("no base stimuli".into()));
    }
    if n_trials == 0 {
        return Err(ProfileError::Config("n_trials must be >= 1".into()));
    }
    let mut trials: Vec<TrialSpec> = (0..n_trials)
        .map(|i| {
            let base = &base_stimuli[i % base_stimuli.len()];
            let mut rng: SeededRng = rng::substream(config.seed, i as u64);
            let (pitch, stretch) = sample_profiles_with(config, &mut rng);
            let (a, b) = base.alternatives.clone();
            let option_order = if rng.next_u64() & 1 == 0 { (a, b) } else { (b, a) };
            TrialSpec {
                trial_id: format!("{}-{:04}", base.id, i),
                base_stimulus_id: base.id.clone(),
                pitch_profile: Some(pitch),
                stretch_profile: Some(stretch),
                option_order,
                rendered_audio_path: None,
            }
        })
        .collect();
    let mut shuffler = rng::substream(config.seed, SHUFFLE_STREAM);
    rng::shuffle(&mut trials, &mut shuffler);
    Ok(trials)
}

/// One JSON object per line.
pub fn write_manifest(trials: &[TrialSpec]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t).expect("trial serializes"));
        out.push('\n');
    }
    out
}

pub fn read_manifest(text: &str) -> Result<Vec<TrialSpec>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stimuli() -> Vec<BaseStimulus> {
        vec![BaseStimulus {
            id: "peel-pill".into(),
            alternatives: ("peel".into(), "pill".into()),
            audio_path: None,
        }]
    }

    #[test]
    fn degenerate_sigma() {
        let cfg = RandomizerConfig {
            pitch_sigma_cents: 1e-9,
            stretch_sigma_log2: 1e-9,
            ..RandomizerConfig::word(3)
        };
        let (p, s) = sample_profiles(&cfg).unwrap();
        assert!(p.values().iter().all(|v| v.abs() < 1e-6));
        assert!(s.values().iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn phrase_grid() {
        let (p, s) = sample_profiles(&RandomizerConfig::phrase(1)).unwrap();
        assert_eq!(p.breakpoints().len(), 13);
        assert_eq!(s.breakpoints().len(), 13);
        let last = p.breakpoints()[12].0;
        assert!((last - 1.2).abs() < 1e-12);
        // 13 windows of 100 ms cover 1.3 s
        assert!((last + 0.1 - 1.3).abs() < 1e-12);
        let (w, _) = sample_profiles(&RandomizerConfig::word(1)).unwrap();
        assert_eq!(w.breakpoints().len(), 4);
    }

    #[test]
    fn interpolation() {
        let p = BreakpointProfile::new(ProfileKind::PitchCents, vec![(0.0, 0.0), (0.1, 100.0)]).unwrap();
        assert_eq!(interpolate_profile(&p, 0.1), 100.0);
        assert_eq!(interpolate_profile(&p, 0.0), 0.0);
        assert!((interpolate_profile(&p, 0.05) - 50.0).abs() < 1e-9);
        assert_eq!(interpolate_profile(&p, 7.0), 100.0);
    }

    #[test]
    fn profile_validation() {
        assert_eq!(
            BreakpointProfile::new(ProfileKind::PitchCents, vec![]).unwrap_err(),
            ProfileError::Empty
        );
        assert_eq!(
            BreakpointProfile::new(ProfileKind::PitchCents, vec![(0.1, 0.0)]).unwrap_err(),
            ProfileError::BadTimes(0)
        );
        assert_eq!(
            BreakpointProfile::new(ProfileKind::PitchCents, vec![(0.0, 0.0), (0.0, 1.0)]).unwrap_err(),
            ProfileError::BadTimes(1)
        );
        assert_eq!(
            BreakpointProfile::new(ProfileKind::StretchRatio, vec![(0.0, 0.0)]).unwrap_err(),
            ProfileError::NonPositiveRatio(0)
        );
    }

    #[test]
    fn csv_round_trip() {
        let (p, s) = sample_profiles(&RandomizerConfig::word(11)).unwrap();
        assert_eq!(BreakpointProfile::from_csv(&p.to_csv()).unwrap(), p);
        assert_eq!(BreakpointProfile::from_csv(&s.to_csv()).unwrap(), s);
        assert!(matches!(
            BreakpointProfile::from_csv("kind,time_s,value\npitch_cents,0,x\n"),
            Err(ProfileError::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn batch_size_and_reproducibility() {
        let cfg = RandomizerConfig::word(42);
        let a = make_trial_batch(&stimuli(), 250, &cfg).unwrap();
        let b = make_trial_batch(&stimuli(), 250, &cfg).unwrap();
        assert_eq!(a.len(), 250);
        assert_eq!(a, b);
        let c = make_trial_batch(&stimuli(), 250, &RandomizerConfig::word(43)).unwrap();
        assert_ne!(a, c);
        let one = make_trial_batch(&stimuli(), 1, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].pitch_profile.as_ref().unwrap().breakpoints().len(), 4);
    }

    #[test]
    fn option_order_is_balanced() {
        let trials = make_trial_batch(&stimuli(), 1000, &RandomizerConfig::word(5)).unwrap();
        let first_peel = trials.iter().filter(|t| t.option_order.0 == "peel").count();
        let frac = first_peel as f64 / 1000.0;
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
        assert!(trials.iter().all(|t| t.offers("peel") && t.offers("pill")));
    }

    #[test]
    fn log_symmetric_stretch() {
        let cfg = RandomizerConfig::default();
        for g in [-3.0, -1.5, -0.2, 0.0, 0.7, 1.9, 2.5] {
            let prod = cfg.stretch_ratio(g) * cfg.stretch_ratio(-g);
            assert!((prod - 1.0).abs() < 1e-12);
        }
        assert_eq!(cfg.stretch_ratio(1.0), 2.0);
        assert_eq!(cfg.stretch_ratio(-1.0), 0.5);
    }

    #[test]
    fn linear_domain_stays_positive() {
        let cfg = RandomizerConfig {
            stretch_domain: StretchDomain::Linear,
            ..Default::default()
        };
        assert_eq!(cfg.stretch_ratio(-5.0), LINEAR_STRETCH_FLOOR);
        assert_eq!(cfg.stretch_ratio(5.0), 3.0);
    }

    #[test]
    fn manifest_round_trip() {
        let trials = make_trial_batch(&stimuli(), 5, &RandomizerConfig::word(9)).unwrap();
        let text = write_manifest(&trials);
        assert_eq!(text.lines().count(), 5);
        assert_eq!(read_manifest(&text).unwrap(), trials);
    }
}
