//! Acceptance suite: one line per criterion, checked against its tolerance
//! and its runtime budget. Runs sequentially so the timings mean something.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use prosody_core::analysis::kernel::{cosine_similarity, single_kernel, KernelKind};
use prosody_core::analysis::stats::{anova_from_summary, chi_square_gof, GroupSummary};
use prosody_core::analysis::wer::{bundled_homophones, bundled_minimal_pairs, read_wer_responses, wer_report};
use prosody_core::clarity::{
    apply_durations, build_validation_grid, decide_clarity, ClarityConfig, Decision, DurationApplication, GridCondition,
    Style,
};
use prosody_core::dsp::{
    flatten_pitch, pitch_shift, read_wav, time_stretch, track_f0, write_wav, AudioBuffer, WavFormat, SYNTHESIS_HOP,
};
use prosody_core::features::{fit_clusters, k_sweep};
use prosody_core::lexicon::Lexicon;
use prosody_core::rng::{seeded, standard_normal, substream};
use prosody_core::stimgen::{sample_profiles_with, BreakpointProfile, ProfileKind, RandomizerConfig};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn chi_square() -> Outcome {
    let a = chi_square_gof(&[60.0, 33.0, 27.0], None).map_err(|e| e.to_string())?.statistic;
    let b = chi_square_gof(&[25.0, 55.0, 38.0], None).map_err(|e| e.to_string())?.statistic;
    check(
        (a - 15.45).abs() <= 0.01 && (b - 11.51).abs() <= 0.01,
        format!("[60,33,27] -> {a:.4} (15.45); [25,55,38] -> {b:.4} (11.51)"),
    )
}

fn anova() -> Outcome {
    let summary = |means: [f64; 3], sds: [f64; 3]| GroupSummary { n: vec![24; 3], means: means.to_vec(), sds: sds.to_vec() };
    let c1 = anova_from_summary(&summary([1.71, 5.71, 7.42], [1.0, 2.03, 1.91])).map_err(|e| e.to_string())?;
    let c2 = anova_from_summary(&summary([2.95, 4.04, 7.75], [1.57, 2.01, 1.98])).map_err(|e| e.to_string())?;
    check(
        (c1.f - 70.46).abs() <= 0.5 && (c1.omega_squared - 0.67).abs() <= 0.01 && (c2.f - 43.49).abs() <= 0.5,
        format!(
            "case 1 F={:.3} (70.46), omega^2={:.4} (0.67); case 2 F={:.3} (43.49)",
            c1.f, c1.omega_squared, c2.f
        ),
    )
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pitch profiles (in sigma units) and choices from a logistic observer
/// weighting each window by `kernel`; a zero kernel gives a coin-flipper.
fn simulate_observer(kernel: &[f64], n_trials: usize, seed: u64) -> Vec<(Vec<f64>, bool)> {
    let config = RandomizerConfig::phrase(seed);
    let mut stim = substream(seed, 1);
    let mut noise = substream(seed, 2);
    (0..n_trials)
        .map(|_| {
            let (pitch, _) = sample_profiles_with(&config, &mut stim);
            let z: Vec<f64> = pitch.values().iter().map(|c| c / config.pitch_sigma_cents).collect();
            let drive: f64 = z.iter().zip(kernel).map(|(a, w)| a * w).sum();
            let chose_a = noise.random::<f64>() < logistic(drive);
            (z, chose_a)
        })
        .collect()
}

fn kernel_recovery() -> Outcome {
    let planted: Vec<f64> = (0..13).map(|i| (-((i as f64 - 6.0) / 2.5).powi(2)).exp() - 0.3).collect();
    let trials = simulate_observer(&planted, 5000, 11);
    let refs: Vec<(&[f64], bool)> = trials.iter().map(|(p, a)| (p.as_slice(), *a)).collect();
    let k = single_kernel(KernelKind::Pitch, &refs).map_err(|e| e.to_string())?;
    let cos = cosine_similarity(&k.values, &planted);

    let zero = vec![0.0; 13];
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..50 {
        let trials = simulate_observer(&zero, 5000, 1000 + seed);
        let refs: Vec<(&[f64], bool)> = trials.iter().map(|(p, a)| (p.as_slice(), *a)).collect();
        let k = single_kernel(KernelKind::Pitch, &refs).map_err(|e| e.to_string())?;
        for w in k.windows.as_ref().ok_or("no window tests")? {
            total += 1;
            hits += usize::from(w.p_value < 0.05);
        }
    }
    let rate = hits as f64 / total as f64;
    check(
        cos >= 0.9 && rate <= 0.10,
        format!("cosine {cos:.4} (>= 0.9); null windows significant {hits}/{total} = {:.1}% (<= 10%)", rate * 100.0),
    )
}

fn randomizer() -> Outcome {
    let config = RandomizerConfig::word(5);
    let mut rng = seeded(5);
    let (mut pitch, mut stretch) = (Vec::with_capacity(1_000_000), Vec::with_capacity(1_000_000));
    while pitch.len() < 1_000_000 {
        let (p, s) = sample_profiles_with(&config, &mut rng);
        pitch.extend(p.values());
        stretch.extend(s.values());
    }
    let n = pitch.len() as f64;
    let mean = pitch.iter().sum::<f64>() / n;
    let sd = (pitch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sem = sd / n.sqrt();
    let in_bounds = pitch.iter().all(|p| p.abs() <= 200.0);
    let clipped_at_200 = pitch.iter().filter(|p| p.abs() == 200.0).count();
    let stretch_ok = stretch.iter().all(|s| (0.25..=4.0).contains(s));
    let windows = (config.n_windows, RandomizerConfig::phrase(0).n_windows);
    check(
        in_bounds && clipped_at_200 > 0 && stretch_ok && mean.abs() <= 3.0 * sem && windows == (4, 13),
        format!(
            "{} pitch draws, {clipped_at_200} at exactly +-200, mean {mean:.3} (3 SEM = {:.3}), stretch in [0.25, 4]: {stretch_ok}, windows {windows:?}",
            pitch.len(),
            3.0 * sem
        ),
    )
}

/// Harmonic complex with a slow f0 glide.
fn glide(f0_lo: f64, f0_hi: f64, dur: f64, sr: u32) -> AudioBuffer {
    let n = (dur * sr as f64) as usize;
    let mut phase = 0.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            phase += std::f64::consts::TAU * (f0_lo + (f0_hi - f0_lo) * t) / sr as f64;
            0.3 * (1..=4).map(|h| (phase * h as f64).sin() / h as f64).sum::<f64>()
        })
        .collect();
    AudioBuffer::new(samples, sr).unwrap()
}

fn dsp() -> Outcome {
    let tone = AudioBuffer::sine(220.0, 0.5, 1.0, 22050);
    let two = BreakpointProfile::constant(ProfileKind::StretchRatio, 2.0).map_err(|e| e.to_string())?;
    let long = time_stretch(&tone, &two).map_err(|e| e.to_string())?;
    let len_err = long.len() as i64 - 2 * tone.len() as i64;

    let octave = BreakpointProfile::constant(ProfileKind::PitchCents, 1200.0).map_err(|e| e.to_string())?;
    let up = pitch_shift(&tone, &octave).map_err(|e| e.to_string())?;
    let mut f: Vec<f64> = track_f0(&up).voiced().collect();
    f.sort_by(f64::total_cmp);
    let f_up = f.get(f.len() / 2).copied().unwrap_or(f64::NAN);

    let flat = flatten_pitch(&glide(150.0, 260.0, 1.5, 22050), 120.0).map_err(|e| e.to_string())?;
    let v: Vec<f64> = track_f0(&flat).voiced().collect();
    let worst = v.iter().map(|x| (x - 120.0).abs()).fold(0.0, f64::max);
    check(
        len_err.unsigned_abs() as usize <= SYNTHESIS_HOP
            && (f_up / 440.0 - 1.0).abs() <= 0.02
            && !v.is_empty()
            && worst <= 3.0,
        format!(
            "2x stretch length error {len_err} samples (hop {SYNTHESIS_HOP}); +1200 cents f0 {f_up:.2} Hz (440 +-2%); flatten {} voiced frames, worst |f0-120| {worst:.2} Hz",
            v.len()
        ),
    )
}

fn clarity() -> Outcome {
    let lex = Lexicon::bundled();
    let config = ClarityConfig::default();
    let expect = [
        ("peel", Decision::Stretch),
        ("fool", Decision::Stretch),
        ("cot", Decision::Stretch),
        ("pill", Decision::Hold),
        ("full", Decision::Hold),
        ("cut", Decision::Hold),
        // tense and lax vowels in one word: the stressed tense vowel decides
        ("believe", Decision::Stretch),
        ("between", Decision::Stretch),
        ("police", Decision::Stretch),
        ("receive", Decision::Stretch),
        ("remove", Decision::Stretch),
        ("city", Decision::Hold),
        ("busy", Decision::Hold),
        ("pretty", Decision::Hold),
        ("really", Decision::Hold),
        ("cookie", Decision::Hold),
    ];
    let wrong: Vec<String> = expect
        .iter()
        .filter_map(|&(w, d)| {
            let got = decide_clarity(w, lex.get(w), &config);
            (got != d).then(|| format!("{w}: {got:?} != {d:?}"))
        })
        .collect();
    let grid = build_validation_grid();
    let steps = grid.steps(GridCondition::ContextAndWord);
    let (first, last) = (steps[0], steps[steps.len() - 1]);
    let ends_ok = (first.word - 2.0).abs() < 1e-12
        && (first.context - 0.67).abs() < 0.005
        && (last.word - 0.5).abs() < 0.005
        && (last.context - 1.5).abs() < 1e-12;
    let opposed = steps.iter().all(|s| (s.word - 1.0) * (s.context - 1.0) <= 0.0);
    check(
        wrong.is_empty() && steps.len() == 11 && ends_ok && opposed,
        format!(
            "{} golden words, {} mixed-vowel; mismatches {wrong:?}; grid {} steps, ends ({}, {:.2}) / ({:.2}, {})",
            expect.len(),
            expect.len() - 6,
            steps.len(),
            first.word,
            first.context,
            last.word,
            last.context
        ),
    )
}

fn durations() -> Outcome {
    let log_w = vec![0.3, 1.2, -0.5, 2.0, 0.0];
    let mask = vec![1.0, 1.0, 0.0, 1.0, 1.0];
    let rate = vec![0.75, 0.9, 1.0, 0.75, 1.1];
    let identity = apply_durations(&DurationApplication {
        log_w: log_w.clone(),
        x_mask: mask.clone(),
        speechrate: rate.clone(),
        c_array: vec![1.0; 5],
    })
    .map_err(|e| e.to_string())?;
    let id_ok = identity
        .y_lengths
        .iter()
        .enumerate()
        .all(|(i, y)| (y - (log_w[i].exp() * mask[i]).ceil() * rate[i]).abs() < 1e-12);
    let worked = apply_durations(&DurationApplication {
        log_w: vec![0.0, 2f64.ln(), 3f64.ln()],
        x_mask: vec![1.0; 3],
        speechrate: vec![0.75; 3],
        c_array: vec![1.0, 1.6, 1.0],
    })
    .map_err(|e| e.to_string())?;
    let w_ok = worked.y_lengths.iter().zip([0.75, 2.4, 2.25]).all(|(a, b)| (a - b).abs() < 1e-9)
        && (worked.y_max_length - 5.4).abs() < 1e-9;
    check(
        id_ok && w_ok,
        format!("identity matches: {id_ok}; worked y_lengths {:?}, y_max {}", worked.y_lengths, worked.y_max_length),
    )
}

fn core_data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn wer() -> Outcome {
    let text = std::fs::read_to_string(core_data("wer_fixture.jsonl")).map_err(|e| e.to_string())?;
    let responses = read_wer_responses(&text).map_err(|e| e.to_string())?;
    let report = wer_report(&responses, &bundled_minimal_pairs(), &bundled_homophones()).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (style, pct) in [(Style::Base, 24.30), (Style::Stretch, 19.82), (Style::Emphasis, 24.44), (Style::Clarity, 15.15)] {
        let got = report.style(style).map(|c| c.wer() * 100.0).unwrap_or(f64::NAN);
        ok &= (got - pct).abs() <= 0.01;
        parts.push(format!("{} {got:.3}% ({pct})", style.as_str()));
    }
    check(ok, parts.join(", "))
}

fn clustering() -> Outcome {
    let centers = [[0.0, 0.0], [10.0, 10.0]];
    let mut rng = seeded(21);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| centers[i % 2].iter().map(|c| c + 0.1 * standard_normal(&mut rng)).collect())
        .collect();
    let model = fit_clusters(&rows, 2, 0).map_err(|e| e.to_string())?;
    let fitted = model.centers_unscaled();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let straight = dist(&fitted[0], &centers[0]).max(dist(&fitted[1], &centers[1]));
    let swapped = dist(&fitted[0], &centers[1]).max(dist(&fitted[1], &centers[0]));
    let err = straight.min(swapped);
    let sweep = k_sweep(&rows, 2..=10, 0).map_err(|e| e.to_string())?;
    let ks: Vec<usize> = sweep.iter().map(|r| r.k).collect();
    check(
        model.silhouette >= 0.9 && err <= 0.2 && ks == (2..=10).collect::<Vec<_>>(),
        format!("silhouette {:.4} (>= 0.9), worst center error {err:.4} (<= 0.2), sweep k {ks:?}", model.silhouette),
    )
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_prosody")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Files only: base audio -> `stimgen batch` -> `stimgen export-profiles` ->
/// `dsp apply` per trial -> listeners that judge the rendered WAVs ->
/// `analyze kernels`.
fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    write_wav(&glide(140.0, 140.0, 0.4, 16000), d.join("base.wav"), WavFormat::Pcm16).map_err(|e| e.to_string())?;
    std::fs::write(d.join("stimuli.jsonl"), "{\"id\":\"pp\",\"alternatives\":[\"peel\",\"pill\"],\"audio_path\":\"base.wav\"}\n")
        .map_err(|e| e.to_string())?;
    let manifest = d.join("manifest.jsonl");
    cli(&["--seed", "8", "stimgen", "batch", "--stimuli", p(&d.join("stimuli.jsonl")), "--n-trials", "80", "--out", p(&manifest)])?;
    let profiles = d.join("profiles");
    cli(&["stimgen", "export-profiles", "--manifest", p(&manifest), "--dir", p(&profiles)])?;

    let text = std::fs::read_to_string(&manifest).map_err(|e| e.to_string())?;
    let trial_ids: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).map(|v| v["trial_id"].as_str().unwrap_or("").to_string()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let rendered = d.join("rendered");
    std::fs::create_dir_all(&rendered).map_err(|e| e.to_string())?;
    for id in &trial_ids {
        cli(&[
            "dsp",
            "apply",
            "--pitch-profile",
            p(&profiles.join(format!("{id}.pitch.csv"))),
            "--stretch-profile",
            p(&profiles.join(format!("{id}.stretch.csv"))),
            p(&d.join("base.wav")),
            p(&rendered.join(format!("{id}.wav"))),
        ])?;
    }

    // listeners hear "peel" when the early part sounds high and long
    let mut responses = String::new();
    for (li, listener) in ["L1", "L2", "L3"].iter().enumerate() {
        let mut rng = substream(99, li as u64);
        for id in &trial_ids {
            let audio = read_wav(rendered.join(format!("{id}.wav"))).map_err(|e| e.to_string())?;
            let track = track_f0(&audio);
            let early: Vec<f64> = track.frames.iter().take(15).filter_map(|&(_, f)| f).collect();
            let pitch = if early.is_empty() { 0.0 } else { 1200.0 * (early.iter().sum::<f64>() / early.len() as f64 / 140.0).log2() };
            let length = (audio.duration_s() / 0.4).log2();
            let drive = pitch / 100.0 + 0.5 * length + standard_normal(&mut rng);
            let choice = if drive > 0.0 { "peel" } else { "pill" };
            responses.push_str(&format!("{{\"participant_id\":\"{listener}\",\"trial_id\":\"{id}\",\"choice\":\"{choice}\"}}\n"));
        }
    }
    let resp_path = d.join("responses.jsonl");
    std::fs::write(&resp_path, responses).map_err(|e| e.to_string())?;
    let report = cli(&["analyze", "kernels", "--manifest", p(&manifest), "--responses", p(&resp_path), "--word-a", "peel", "--format", "json"])?;
    let v: serde_json::Value = serde_json::from_str(&report).map_err(|e| e.to_string())?;
    let mut norms = Vec::new();
    for g in v["group"].as_array().ok_or("no group kernels")? {
        let values: Vec<f64> = g["kernel"]["values"].as_array().ok_or("no values")?.iter().filter_map(|x| x.as_f64()).collect();
        norms.push((g["kernel"]["kind"].as_str().unwrap_or("?").to_string(), values.iter().map(|x| x * x).sum::<f64>().sqrt()));
    }
    let ok = norms.len() == 2 && norms.iter().all(|(_, n)| (n - 1.0).abs() <= 1e-9);
    check(ok, format!("{} trials rendered, 3 listeners; kernel norms {norms:?}", trial_ids.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("chi-square goodness of fit", Duration::from_secs(1), chi_square),
        ("ANOVA from summary statistics", Duration::from_secs(1), anova),
        ("kernel recovery and null rate", Duration::from_secs(30), kernel_recovery),
        ("randomizer contract", Duration::from_secs(10), randomizer),
        ("DSP stretch, shift, flatten", Duration::from_secs(10), dsp),
        ("clarity decisions and validation grid", Duration::from_secs(1), clarity),
        ("duration equation", Duration::from_secs(1), durations),
        ("WER fixture", Duration::from_secs(1), wer),
        ("clustering", Duration::from_secs(5), clustering),
        ("end-to-end from files", Duration::from_secs(60), end_to_end),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (elapsed <= budget, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {name}: {detail} [{:.3} s of {} s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
