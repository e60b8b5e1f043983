//! Ten-feature voice profiles, robust scaling and k-means clustering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::RngCore;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioBuffer, PitchTrack};
use crate::rng;

pub const MIN_DURATION_S: f64 = 0.5;
pub const INTENSITY_FLOOR_DB: f64 = -100.0;
pub const SLOPE_BAND_HZ: (f64, f64) = (50.0, 5000.0);
pub const NUCLEUS_PROMINENCE_DB: f64 = 2.0;
/// Peaks this far below the loudest frame are not syllable nuclei.
pub const NUCLEUS_FLOOR_BELOW_MAX_DB: f64 = 25.0;
pub const PAUSE_GATE_DBFS: f64 = -35.0;
pub const PAUSE_MIN_S: f64 = 0.150;
const SLOPE_FFT: usize = 1024;

pub const FEATURE_NAMES: [&str; 10] = [
    "mean_intensity_db",
    "energy",
    "max_intensity_db",
    "median_pitch_hz",
    "pitch_range_hz",
    "shimmer_local",
    "jitter_local",
    "spectral_slope_db_per_octave",
    "speech_rate_syll_per_s",
    "pause_rate",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("audio is {0:.3} s long; at least 0.5 s is required")]
    TooShort(f64),
    #[error("need at least {need} vectors, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("k = {k} is invalid for {n} points")]
    BadK { k: usize, n: usize },
    #[error("assignment and label lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_intensity_db: f64,
    pub energy: f64,
    pub max_intensity_db: f64,
    pub median_pitch_hz: Option<f64>,
    pub pitch_range_hz: Option<f64>,
    pub shimmer_local: Option<f64>,
    pub jitter_local: Option<f64>,
    pub spectral_slope_db_per_octave: f64,
    pub speech_rate_syll_per_s: f64,
    pub pause_rate: Option<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> [Option<f64>; 10] {
        [
            Some(self.mean_intensity_db),
            Some(self.energy),
            Some(self.max_intensity_db),
            self.median_pitch_hz,
            self.pitch_range_hz,
            self.shimmer_local,
            self.jitter_local,
            Some(self.spectral_slope_db_per_octave),
            Some(self.speech_rate_syll_per_s),
            self.pause_rate,
        ]
    }

    /// All ten values, or `None` when any is missing.
    pub fn complete_row(&self) -> Option<Vec<f64>> {
        self.values().into_iter().collect()
    }

    pub fn from_values(v: [Option<f64>; 10]) -> Option<Self> {
        Some(FeatureVector {
            mean_intensity_db: v[0]?,
            energy: v[1]?,
            max_intensity_db: v[2]?,
            median_pitch_hz: v[3],
            pitch_range_hz: v[4],
            shimmer_local: v[5],
            jitter_local: v[6],
            spectral_slope_db_per_octave: v[7]?,
            speech_rate_syll_per_s: v[8]?,
            pause_rate: v[9],
        })
    }
}

fn to_db(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10()).max(INTENSITY_FLOOR_DB)
    } else {
        INTENSITY_FLOOR_DB
    }
}

/// Frame power in dB on the same 40 ms / 10 ms grid as the f0 tracker.
pub fn intensity_contour(audio: &AudioBuffer) -> Vec<f64> {
    let sr = audio.sample_rate as f64;
    let w = ((dsp::F0_FRAME_S * sr).round() as usize).max(2);
    let hop = ((dsp::F0_HOP_S * sr).round() as usize).max(1);
    let x = &audio.samples;
    let mut out = Vec::new();
    let mut start = 0;
    while start < x.len() {
        let end = (start + w).min(x.len());
        let p = x[start..end].iter().map(|s| s * s).sum::<f64>() / w as f64;
        out.push(to_db(p));
        start += hop;
        if start + w > x.len() {
            break;
        }
    }
    out
}

pub fn extract_features(audio: &AudioBuffer) -> Result<FeatureVector, FeatureError> {
    let dur = audio.duration_s();
    if dur < MIN_DURATION_S {
        return Err(FeatureError::TooShort(dur));
    }
    let x = &audio.samples;
    let energy: f64 = x.iter().map(|s| s * s).sum();
    let mean_intensity_db = to_db(energy / x.len() as f64);
    let contour = intensity_contour(audio);
    let max_intensity_db = contour.iter().cloned().fold(INTENSITY_FLOOR_DB, f64::max);

    let track = dsp::track_f0(audio);
    let mut voiced: Vec<f64> = track.voiced().collect();
    voiced.sort_by(f64::total_cmp);
    let (median_pitch_hz, pitch_range_hz) = if voiced.is_empty() {
        (None, None)
    } else {
        (Some(quantile_sorted(&voiced, 0.5)), Some(voiced[voiced.len() - 1] - voiced[0]))
    };
    let (jitter_local, shimmer_local) = perturbation(audio, &track);
    let voiced_mask: Vec<bool> = (0..contour.len())
        .map(|i| track.frames.get(i).is_some_and(|f| f.1.is_some()))
        .collect();
    let nuclei = syllable_nuclei(&contour, &voiced_mask);
    let pause_rate = if contour.iter().any(|&d| d >= PAUSE_GATE_DBFS) {
        Some(count_pauses(&contour, track.frame_hop_s) as f64 / dur)
    } else {
        None
    };
    Ok(FeatureVector {
        mean_intensity_db,
        energy,
        max_intensity_db,
        median_pitch_hz,
        pitch_range_hz,
        shimmer_local,
        jitter_local,
        spectral_slope_db_per_octave: spectral_slope(audio),
        speech_rate_syll_per_s: nuclei.len() as f64 / dur,
        pause_rate,
    })
}

/// Upward zero crossings (fractional sample positions).
fn upward_crossings(x: &[f64]) -> Vec<f64> {
    (1..x.len())
        .filter(|&i| x[i - 1] < 0.0 && x[i] >= 0.0)
        .map(|i| {
            let (a, b) = (x[i - 1], x[i]);
            (i - 1) as f64 + a / (a - b)
        })
        .collect()
}

fn f0_at(track: &PitchTrack, t: f64) -> Option<f64> {
    if track.frames.is_empty() {
        return None;
    }
    let first = track.frames[0].0;
    let idx = ((t - first) / track.frame_hop_s).round();
    let idx = idx.clamp(0.0, (track.frames.len() - 1) as f64) as usize;
    track.frames[idx].1
}

/// Local jitter and shimmer over pitch marks at upward zero crossings.
///
/// From each mark the next mark is the crossing closest to one tracked
/// period later (within 25%); consecutive accepted periods feed
/// mean|ΔT|/mean T and mean|ΔA|/mean A, where A is the peak amplitude of
/// each period.
fn perturbation(audio: &AudioBuffer, track: &PitchTrack) -> (Option<f64>, Option<f64>) {
    let sr = audio.sample_rate as f64;
    let x = &audio.samples;
    let marks = upward_crossings(x);
    // runs of consecutive periods: (length in samples, peak amplitude)
    let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < marks.len() {
        let m = marks[i];
        let Some(f0) = f0_at(track, m / sr) else {
            if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
            i += 1;
            continue;
        };
        let expected = sr / f0;
        let mut best: Option<usize> = None;
        for (j, &c) in marks.iter().enumerate().skip(i + 1) {
            let d = c - m;
            if d > 1.25 * expected {
                break;
            }
            if d >= 0.75 * expected
                && best.is_none_or(|b| (d - expected).abs() < (marks[b] - m - expected).abs())
            {
                best = Some(j);
            }
        }
        match best {
            Some(j) => {
                let lo = m.ceil() as usize;
                let hi = (marks[j].floor() as usize).min(x.len() - 1);
                let amp = x[lo..=hi.max(lo)].iter().fold(0.0f64, |a, s| a.max(s.abs()));
                current.push((marks[j] - m, amp));
                i = j;
            }
            None => {
                if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
                i += 1;
            }
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    let mut d_t = Vec::new();
    let mut d_a = Vec::new();
    let mut all_t = Vec::new();
    let mut all_a = Vec::new();
    for run in &runs {
        for p in run {
            all_t.push(p.0);
            all_a.push(p.1);
        }
        for w in run.windows(2) {
            d_t.push((w[1].0 - w[0].0).abs());
            d_a.push((w[1].1 - w[0].1).abs());
        }
    }
    if d_t.is_empty() {
        return (None, None);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let jitter = mean(&d_t) / mean(&all_t);
    let mean_a = mean(&all_a);
    let shimmer = if mean_a > 0.0 { Some(mean(&d_a) / mean_a) } else { None };
    (Some(jitter), shimmer)
}

/// Least-squares slope of the averaged power spectrum in dB against
/// log2 frequency over 50-5000 Hz, i.e. dB per octave.
pub fn spectral_slope(audio: &AudioBuffer) -> f64 {
    let n = SLOPE_FFT;
    let sr = audio.sample_rate as f64;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect();
    let x = &audio.samples;
    let mut power = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut start = 0;
    loop {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x.get(start + j).copied().unwrap_or(0.0) * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        start += n / 2;
        if start + n > x.len() {
            break;
        }
    }
    let pts: Vec<(f64, f64)> = power
        .iter()
        .enumerate()
        .filter_map(|(k, &p)| {
            let f = k as f64 * sr / n as f64;
            (f >= SLOPE_BAND_HZ.0 && f <= SLOPE_BAND_HZ.1).then(|| (f.log2(), to_db(p)))
        })
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let np = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Indices of intensity peaks that are voiced, within 25 dB of the loudest
/// frame, and at least 2 dB above the deeper of the two dips separating
/// them from higher ground (topographic prominence).
pub fn syllable_nuclei(contour: &[f64], voiced: &[bool]) -> Vec<usize> {
    let n = contour.len();
    if n < 3 {
        return Vec::new();
    }
    let top = contour.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let v = contour[i];
        if v > contour[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && contour[j + 1] == v {
                j += 1;
            }
            if j + 1 < n && v > contour[j + 1] {
                let mut left_min = v;
                for k in (0..i).rev() {
                    if contour[k] > v {
                        break;
                    }
                    left_min = left_min.min(contour[k]);
                }
                let mut right_min = v;
                for &c in &contour[j + 1..] {
                    if c > v {
                        break;
                    }
                    right_min = right_min.min(c);
                }
                let prominence = v - left_min.max(right_min);
                let peak = (i + j) / 2;
                if prominence >= NUCLEUS_PROMINENCE_DB
                    && v >= top - NUCLEUS_FLOOR_BELOW_MAX_DB
                    && voiced.get(peak).copied().unwrap_or(false)
                {
                    out.push(peak);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Internal runs of frames below -35 dBFS lasting at least 150 ms.
/// Leading and trailing silence is not a pause.
pub fn count_pauses(contour: &[f64], hop_s: f64) -> usize {
    let min_frames = (PAUSE_MIN_S / hop_s - 1e-9).ceil() as usize;
    let Some(first) = contour.iter().position(|&d| d >= PAUSE_GATE_DBFS) else {
        return 0;
    };
    let last = contour.iter().rposition(|&d| d >= PAUSE_GATE_DBFS).unwrap();
    let mut count = 0;
    let mut run = 0;
    for &d in &contour[first..=last] {
        if d < PAUSE_GATE_DBFS {
            run += 1;
        } else {
            if run >= min_frames {
                count += 1;
            }
            run = 0;
        }
    }
    count
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    /// Columns whose IQR is zero; these are centred but not scaled.
    pub degenerate: Vec<bool>,
}

impl ScalerParams {
    fn divisor(&self, c: usize) -> f64 {
        if self.degenerate[c] {
            1.0
        } else {
            self.iqr[c]
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, &v)| (v - self.median[c]) / self.divisor(c))
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, &v)| v * self.divisor(c) + self.median[c])
            .collect()
    }
}

fn check_matrix(rows: &[Vec<f64>], need: usize) -> Result<usize, FeatureError> {
    if rows.len() < need {
        return Err(FeatureError::TooFew {
            need,
            got: rows.len(),
        });
    }
    let dims = rows[0].len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != dims {
            return Err(FeatureError::Ragged {
                row: r,
                got: row.len(),
                expected: dims,
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: r, col: c });
        }
    }
    Ok(dims)
}

/// Per column: (x - median) / IQR.
pub fn robust_scale(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ScalerParams), FeatureError> {
    let dims = check_matrix(rows, 2)?;
    let mut median = Vec::with_capacity(dims);
    let mut iqr = Vec::with_capacity(dims);
    let mut degenerate = Vec::with_capacity(dims);
    for c in 0..dims {
        let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        col.sort_by(f64::total_cmp);
        let q = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        median.push(quantile_sorted(&col, 0.5));
        iqr.push(q);
        degenerate.push(q == 0.0);
    }
    let params = ScalerParams {
        median,
        iqr,
        degenerate,
    };
    let scaled = rows.iter().map(|r| params.transform(r)).collect();
    Ok((scaled, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Within-cluster SSE after each assignment step of the winning run.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            n_init: 10,
            max_iter: 300,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn uniform_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn kmeans_pp<R: RngCore + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![data[uniform_index(rng, data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = uniform01(rng) * total;
            let mut chosen = data.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            uniform_index(rng, data.len())
        };
        let c = data[idx].clone();
        for (d, p) in d2.iter_mut().zip(data) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(data: &[Vec<f64>], centers: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut sse = 0.0;
    for (p, a) in data.iter().zip(out.iter_mut()) {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, dist2(p, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *a = best;
        sse += d;
    }
    sse
}

fn lloyd(data: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let k = centers.len();
    let dims = data[0].len();
    let mut assignments = vec![usize::MAX; data.len()];
    let mut next = vec![0; data.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let sse = assign(data, &centers, &mut next);
        history.push(sse);
        iterations += 1;
        let changed = next != assignments;
        assignments.copy_from_slice(&next);
        if !changed || iterations >= max_iter {
            break;
        }
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // farthest point from its own (updated) centre
                let far = (0..data.len())
                    .max_by(|&a, &b| {
                        dist2(&data[a], &centers[assignments[a]])
                            .total_cmp(&dist2(&data[b], &centers[assignments[b]]))
                    })
                    .unwrap();
                centers[j] = data[far].clone();
            }
        }
    }
    let inertia = *history.last().unwrap();
    KMeansFit {
        k,
        centers,
        assignments,
        inertia,
        sse_history: history,
        iterations,
    }
}

/// k-means++ seeding and Lloyd iterations; the best of `n_init` seeded
/// restarts by final SSE wins (earliest restart on ties).
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64, opts: KMeansOptions) -> Result<KMeansFit, FeatureError> {
    check_matrix(data, 1)?;
    if k == 0 || k > data.len() {
        return Err(FeatureError::BadK { k, n: data.len() });
    }
    let mut best: Option<KMeansFit> = None;
    for run in 0..opts.n_init.max(1) {
        let mut r = rng::substream(seed, run as u64);
        let fit = lloyd(data, kmeans_pp(data, k, &mut r), opts.max_iter.max(1));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Mean silhouette width. Points in singleton clusters score 0; with one
/// cluster, or one cluster per point, the score is 0.
pub fn silhouette(data: &[Vec<f64>], assignments: &[usize]) -> f64 {
    let n = data.len();
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let populated = sizes.iter().filter(|&&s| s > 0).count();
    if n < 2 || populated < 2 || populated == n {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let ci = assignments[i];
        if sizes[ci] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += dist2(&data[i], &data[j]).sqrt();
            }
        }
        let a = sums[ci] / (sizes[ci] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != ci && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centres in scaled space.
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub scaler: ScalerParams,
    pub silhouette: f64,
    pub inertia: f64,
}

impl ClusterModel {
    pub fn centers_unscaled(&self) -> Vec<Vec<f64>> {
        self.centers.iter().map(|c| self.scaler.inverse(c)).collect()
    }
}

/// Robust-scales `rows`, clusters them and scores the result.
pub fn fit_clusters(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel, FeatureError> {
    if k < 2 || k > rows.len() {
        return Err(FeatureError::BadK { k, n: rows.len() });
    }
    let (scaled, scaler) = robust_scale(rows)?;
    let fit = kmeans(&scaled, k, seed, KMeansOptions::default())?;
    let silhouette = silhouette(&scaled, &fit.assignments);
    Ok(ClusterModel {
        k,
        centers: fit.centers,
        assignments: fit.assignments,
        scaler,
        silhouette,
        inertia: fit.inertia,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

/// One row per k in `ks` that fits the data (k < n).
pub fn k_sweep(rows: &[Vec<f64>], ks: std::ops::RangeInclusive<usize>, seed: u64) -> Result<Vec<SweepRow>, FeatureError> {
    let mut out = Vec::new();
    for k in ks {
        if k < 2 || k >= rows.len() {
            continue;
        }
        let m = fit_clusters(rows, k, seed)?;
        out.push(SweepRow {
            k,
            inertia: m.inertia,
            silhouette: m.silhouette,
        });
    }
    Ok(out)
}

pub fn sweep_report(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,inertia,silhouette\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.k, r.inertia, r.silhouette);
    }
    if let Some(best) = rows.iter().max_by(|a, b| a.silhouette.total_cmp(&b.silhouette)) {
        let _ = writeln!(out, "# best k by silhouette: {}", best.k);
    }
    out
}

/// For each ambiance, the share of its utterances in each cluster.
pub fn cluster_ambiance_table(
    assignments: &[usize],
    labels: &[String],
    k: usize,
) -> Result<BTreeMap<String, Vec<f64>>, FeatureError> {
    if assignments.len() != labels.len() {
        return Err(FeatureError::LengthMismatch(assignments.len(), labels.len()));
    }
    let k = k.max(assignments.iter().max().map_or(0, |m| m + 1));
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (&a, l) in assignments.iter().zip(labels) {
        counts.entry(l.clone()).or_insert_with(|| vec![0; k])[a] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(l, c)| {
            let total: usize = c.iter().sum();
            (l, c.iter().map(|&x| x as f64 / total as f64).collect())
        })
        .collect())
}

/// One extracted utterance with its identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub utterance_id: String,
    pub ambiance: String,
    pub features: FeatureVector,
}

pub fn features_csv_header() -> String {
    format!("utterance_id,ambiance,{}", FEATURE_NAMES.join(","))
}

pub fn write_features_csv(records: &[FeatureRecord]) -> String {
    let mut out = features_csv_header();
    out.push('\n');
    for r in records {
        let vals: Vec<String> = r
            .features
            .values()
            .iter()
            .map(|v| v.map_or(String::new(), |x| x.to_string()))
            .collect();
        let _ = writeln!(out, "{},{},{}", r.utterance_id, r.ambiance, vals.join(","));
    }
    out
}

pub fn read_features_csv(text: &str) -> Result<Vec<FeatureRecord>, FeatureError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == features_csv_header() => {}
        Some((i, _)) => {
            return Err(FeatureError::Csv {
                line: i + 1,
                reason: "unexpected header".into(),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |reason: String| FeatureError::Csv { line: i + 1, reason };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 12 {
            return Err(err(format!("expected 12 columns, got {}", cols.len())));
        }
        let mut vals = [None; 10];
        for (slot, raw) in vals.iter_mut().zip(&cols[2..]) {
            if !raw.is_empty() {
                *slot = Some(raw.parse::<f64>().map_err(|e| err(format!("{raw:?}: {e}")))?);
            }
        }
        let features = FeatureVector::from_values(vals).ok_or_else(|| err("required feature missing".into()))?;
        out.push(FeatureRecord {
            utterance_id: cols[0].to_string(),
            ambiance: cols[1].to_string(),
            features,
        });
    }
    Ok(out)
}
