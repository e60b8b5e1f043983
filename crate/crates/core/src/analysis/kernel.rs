//! Reverse-correlation classification images.
//!
//! A participant's kernel is the mean profile of trials answered with word
//! A minus the mean profile of trials answered with word B, divided by its
//! Euclidean norm. Stretch profiles are analysed as log2 ratios so that
//! doubling and halving are symmetric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{one_sample_t, paired_t, welch_t, StatTestResult};
use super::AnalysisError;
use crate::stimgen::TrialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Pitch,
    Stretch,
}

/// Per-window test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub t_stat: f64,
    pub p_value: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
}

impl From<StatTestResult> for WindowStat {
    fn from(r: StatTestResult) -> Self {
        let (lo, hi) = r.ci.unwrap_or((f64::NAN, f64::NAN));
        WindowStat {
            t_stat: r.statistic,
            p_value: r.p_value,
            ci95_lo: lo,
            ci95_hi: hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    /// Normalized values (unit Euclidean norm unless the raw kernel is 0).
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    pub mean_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    /// Welch test of A-trials against B-trials per window; absent when
    /// either response has fewer than two trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<WindowStat>>,
    pub n_participants: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl Kernel {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One trial's perturbations in analysis units and whether word A was
/// chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTrial {
    pub pitch: Vec<f64>,
    pub stretch: Vec<f64>,
    pub chose_a: bool,
}

pub fn single_kernel(
    kind: KernelKind,
    profiles: &[(&[f64], bool)],
) -> Result<Kernel, AnalysisError> {
    let n_a = profiles.iter().filter(|p| p.1).count();
    let n_b = profiles.len() - n_a;
    if n_a == 0 || n_b == 0 {
        return Err(AnalysisError::DegenerateResponder);
    }
    let width = profiles[0].0.len();
    if width == 0 {
        return Err(AnalysisError::Invalid("empty profile".into()));
    }
    if let Some(p) = profiles.iter().find(|p| p.0.len() != width) {
        return Err(AnalysisError::LengthMismatch(width, p.0.len()));
    }
    let mut mean_a = vec![0.0; width];
    let mut mean_b = vec![0.0; width];
    for (vals, a) in profiles {
        let (target, n) = if *a { (&mut mean_a, n_a) } else { (&mut mean_b, n_b) };
        for (m, v) in target.iter_mut().zip(vals.iter()) {
            *m += v / n as f64;
        }
    }
    let raw: Vec<f64> = mean_a.iter().zip(&mean_b).map(|(a, b)| a - b).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let values = if norm > 0.0 {
        raw.iter().map(|v| v / norm).collect()
    } else {
        raw.clone()
    };
    let windows = if n_a >= 2 && n_b >= 2 {
        let mut w = Vec::with_capacity(width);
        for i in 0..width {
            let xa: Vec<f64> = profiles.iter().filter(|p| p.1).map(|p| p.0[i]).collect();
            let xb: Vec<f64> = profiles.iter().filter(|p| !p.1).map(|p| p.0[i]).collect();
            w.push(welch_t(&xa, &xb, 0.95)?.into());
        }
        Some(w)
    } else {
        None
    };
    Ok(Kernel {
        kind,
        values,
        raw,
        mean_a,
        mean_b,
        windows,
        n_participants: 1,
        n_a,
        n_b,
    })
}

/// Pitch and stretch kernels for one participant.
pub fn participant_kernel(trials: &[KernelTrial]) -> Result<(Kernel, Kernel), AnalysisError> {
    let pitch: Vec<(&[f64], bool)> = trials.iter().map(|t| (t.pitch.as_slice(), t.chose_a)).collect();
    let stretch: Vec<(&[f64], bool)> = trials.iter().map(|t| (t.stretch.as_slice(), t.chose_a)).collect();
    Ok((
        single_kernel(KernelKind::Pitch, &pitch)?,
        single_kernel(KernelKind::Stretch, &stretch)?,
    ))
}

/// Which per-window comparison the group test runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTest {
    /// Paired t between each participant's A- and B-conditioned means.
    #[default]
    PairedProfiles,
    /// One-sample t of the normalized kernels against 0.
    KernelVsZero,
}

pub fn group_kernel_tests(kernels: &[Kernel], test: GroupTest) -> Result<Vec<WindowStat>, AnalysisError> {
    if kernels.len() < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: kernels.len() });
    }
    let width = kernels[0].values.len();
    if let Some(k) = kernels.iter().find(|k| k.values.len() != width) {
        return Err(AnalysisError::LengthMismatch(width, k.values.len()));
    }
    (0..width)
        .map(|i| {
            let r = match test {
                GroupTest::PairedProfiles => {
                    let a: Vec<f64> = kernels.iter().map(|k| k.mean_a[i]).collect();
                    let b: Vec<f64> = kernels.iter().map(|k| k.mean_b[i]).collect();
                    paired_t(&a, &b, 0.95)?
                }
                GroupTest::KernelVsZero => {
                    let v: Vec<f64> = kernels.iter().map(|k| k.values[i]).collect();
                    one_sample_t(&v, 0.0, 0.95)?
                }
            };
            Ok(r.into())
        })
        .collect()
}

/// Group kernel: mean of the participant kernels, renormalized.
pub fn mean_kernel(kernels: &[Kernel]) -> Result<Kernel, AnalysisError> {
    if kernels.is_empty() {
        return Err(AnalysisError::TooFew { need: 1, got: 0 });
    }
    let width = kernels[0].values.len();
    let n = kernels.len() as f64;
    let avg = |f: &dyn Fn(&Kernel) -> &Vec<f64>| -> Vec<f64> {
        (0..width).map(|i| kernels.iter().map(|k| f(k)[i]).sum::<f64>() / n).collect()
    };
    let raw = avg(&|k| &k.values);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Kernel {
        kind: kernels[0].kind,
        values: if norm > 0.0 { raw.iter().map(|v| v / norm).collect() } else { raw.clone() },
        raw,
        mean_a: avg(&|k| &k.mean_a),
        mean_b: avg(&|k| &k.mean_b),
        windows: None,
        n_participants: kernels.len(),
        n_a: kernels.iter().map(|k| k.n_a).sum(),
        n_b: kernels.iter().map(|k| k.n_b).sum(),
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// A response line as far as kernel analysis needs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub participant_id: Option<String>,
    pub trial_id: String,
    pub choice: String,
}

impl ChoiceRecord {
    /// Participant key: participant id, else session id, else "anonymous".
    pub fn participant(&self) -> &str {
        self.participant_id
            .as_deref()
            .or(self.session_id.as_deref())
            .unwrap_or("anonymous")
    }
}

/// Joins responses to their trial specs and groups them per participant.
/// Pitch profiles enter in cents, stretch profiles as log2 ratios.
pub fn kernel_trials_by_participant(
    specs: &[TrialSpec],
    responses: &[ChoiceRecord],
    word_a: &str,
) -> Result<BTreeMap<String, Vec<KernelTrial>>, AnalysisError> {
    let by_id: BTreeMap<&str, &TrialSpec> = specs.iter().map(|s| (s.trial_id.as_str(), s)).collect();
    let mut out: BTreeMap<String, Vec<KernelTrial>> = BTreeMap::new();
    for r in responses {
        let spec = by_id
            .get(r.trial_id.as_str())
            .ok_or_else(|| AnalysisError::UnknownTrial(r.trial_id.clone()))?;
        if !spec.offers(&r.choice) {
            return Err(AnalysisError::Invalid(format!(
                "choice {:?} is not offered by trial {}",
                r.choice, r.trial_id
            )));
        }
        let pitch = spec.pitch_profile.as_ref().map(|p| p.values()).unwrap_or_default();
        let stretch = spec
            .stretch_profile
            .as_ref()
            .map(|p| p.values().into_iter().map(f64::log2).collect())
            .unwrap_or_default();
        out.entry(r.participant().to_string()).or_default().push(KernelTrial {
            pitch,
            stretch,
            chose_a: r.choice == word_a,
        });
    }
    Ok(out)
}
