//! `stimgen`, `dsp` and `features` subcommands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use prosody_core::dsp::{self, read_wav, write_wav, AudioBuffer, WavFormat};
use prosody_core::features::{
    cluster_ambiance_table, extract_features, fit_clusters, k_sweep, read_features_csv, sweep_report,
    write_features_csv, FeatureRecord,
};
use prosody_core::stimgen::{
    make_trial_batch, read_manifest, write_manifest, BaseStimulus, BreakpointProfile, RandomizerConfig,
    StretchDomain, TrialSpec,
};

use crate::{print, read_text, usage, Ctx, DspCmd, FeaturesCmd, StimKind, StimgenCmd, WavOut};

fn wav_format(w: &WavOut) -> WavFormat {
    if w.float {
        WavFormat::Float32
    } else {
        WavFormat::Pcm16
    }
}

fn read_audio(p: &Path) -> anyhow::Result<AudioBuffer> {
    read_wav(p).with_context(|| p.display().to_string())
}

fn write_audio(ctx: &Ctx, p: &Path, audio: &AudioBuffer, format: WavFormat) -> anyhow::Result<PathBuf> {
    let p = ctx.out(p);
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_wav(audio, &p, format).with_context(|| p.display().to_string())?;
    Ok(p)
}

fn read_profile(p: &Path) -> anyhow::Result<BreakpointProfile> {
    BreakpointProfile::from_csv(&read_text(p)?).with_context(|| p.display().to_string())
}

fn read_stimuli(p: &Path) -> anyhow::Result<Vec<BaseStimulus>> {
    read_text(p)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", p.display(), i + 1)))
        .collect()
}

fn load_manifest(p: &Path) -> anyhow::Result<Vec<TrialSpec>> {
    read_manifest(&read_text(p)?).with_context(|| p.display().to_string())
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `f` over `items` on scoped threads, preserving order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if items.is_empty() {
        return Vec::new();
    }
    let chunk = items.len().div_ceil(workers());
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub fn stimgen(ctx: &Ctx, cmd: StimgenCmd) -> anyhow::Result<()> {
    match cmd {
        StimgenCmd::Batch {
            stimuli,
            n_trials,
            kind,
            n_windows,
            window_s,
            pitch_sigma_cents,
            stretch_sigma_log2,
            clip_sigmas,
            linear_stretch,
            out,
        } => {
            let mut cfg = match kind {
                StimKind::Word => RandomizerConfig::word(ctx.seed),
                StimKind::Phrase => RandomizerConfig::phrase(ctx.seed),
            };
            if let Some(v) = n_windows {
                cfg.n_windows = v;
            }
            if let Some(v) = window_s {
                cfg.window_s = v;
            }
            if let Some(v) = pitch_sigma_cents {
                cfg.pitch_sigma_cents = v;
            }
            if let Some(v) = stretch_sigma_log2 {
                cfg.stretch_sigma_log2 = v;
            }
            if let Some(v) = clip_sigmas {
                cfg.clip_sigmas = v;
            }
            if linear_stretch {
                cfg.stretch_domain = StretchDomain::Linear;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            if n_trials == 0 {
                return Err(usage("--n-trials must be >= 1"));
            }
            let bases = read_stimuli(&stimuli)?;
            let trials = make_trial_batch(&bases, n_trials, &cfg)?;
            let path = ctx.write(&out, write_manifest(&trials))?;
            log::info!("{} trials -> {}", trials.len(), path.display());
            Ok(())
        }
        StimgenCmd::ExportProfiles { manifest, dir } => {
            let trials = load_manifest(&manifest)?;
            for t in &trials {
                for (suffix, p) in [("pitch", &t.pitch_profile), ("stretch", &t.stretch_profile)] {
                    if let Some(p) = p {
                        ctx.write(&dir.join(format!("{}.{suffix}.csv", t.trial_id)), p.to_csv())?;
                    }
                }
            }
            Ok(())
        }
        StimgenCmd::Render { manifest, stimuli, audio_dir, out } => {
            let mut trials = load_manifest(&manifest)?;
            let base_dir = stimuli.parent().unwrap_or(Path::new("")).to_path_buf();
            let mut sources: HashMap<String, AudioBuffer> = HashMap::new();
            for b in read_stimuli(&stimuli)? {
                let Some(rel) = &b.audio_path else { continue };
                sources.insert(b.id.clone(), read_audio(&base_dir.join(rel))?);
            }
            if let Some(t) = trials.iter().find(|t| !sources.contains_key(&t.base_stimulus_id)) {
                bail!("no audio for base stimulus {:?} (trial {})", t.base_stimulus_id, t.trial_id);
            }
            let audio_dir = ctx.out(&audio_dir);
            std::fs::create_dir_all(&audio_dir)?;
            let results = par_map(&trials, |t| -> anyhow::Result<()> {
                let src = &sources[&t.base_stimulus_id];
                let y = dsp::apply_profiles(src, t.pitch_profile.as_ref(), t.stretch_profile.as_ref())
                    .with_context(|| format!("trial {}", t.trial_id))?;
                write_wav(&y, audio_dir.join(format!("{}.wav", t.trial_id)), WavFormat::Pcm16)?;
                Ok(())
            });
            for r in results {
                r?;
            }
            for t in &mut trials {
                t.rendered_audio_path = Some(format!("{}.wav", t.trial_id));
            }
            ctx.write(&out, write_manifest(&trials))?;
            Ok(())
        }
    }
}

pub fn dsp(ctx: &Ctx, cmd: DspCmd) -> anyhow::Result<()> {
    match cmd {
        DspCmd::Apply { pitch_profile, stretch_profile, input, output, wav } => {
            let pitch = pitch_profile.as_deref().map(read_profile).transpose()?;
            let stretch = stretch_profile.as_deref().map(read_profile).transpose()?;
            if pitch.is_none() && stretch.is_none() {
                return Err(usage("pass --pitch-profile and/or --stretch-profile"));
            }
            let x = read_audio(&input)?;
            let y = dsp::apply_profiles(&x, pitch.as_ref(), stretch.as_ref())?;
            write_audio(ctx, &output, &y, wav_format(&wav))?;
            Ok(())
        }
        DspCmd::Flatten { hz, input, output, wav } => {
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(usage("--hz must be > 0"));
            }
            let x = read_audio(&input)?;
            let y = dsp::flatten_pitch(&x, hz)?;
            write_audio(ctx, &output, &y, wav_format(&wav))?;
            Ok(())
        }
        DspCmd::F0 { input } => {
            let track = dsp::track_f0(&read_audio(&input)?);
            let mut out = String::from("time_s,f0_hz\n");
            for (t, f) in &track.frames {
                let _ = writeln!(out, "{t:.4},{}", f.map_or(String::new(), |f| format!("{f:.3}")));
            }
            print(&out)
        }
        DspCmd::Insert { phrase, word, gap_ms, output, wav } => {
            if !(gap_ms >= 0.0 && gap_ms.is_finite()) {
                return Err(usage("--gap-ms must be >= 0"));
            }
            let ins = dsp::insert_word(&read_audio(&phrase)?, &read_audio(&word)?, gap_ms / 1000.0)?;
            write_audio(ctx, &output, &ins.audio, wav_format(&wav))?;
            print(&format!("splice_index,{}\n", ins.splice_index))
        }
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

pub fn features(ctx: &Ctx, cmd: FeaturesCmd) -> anyhow::Result<()> {
    match cmd {
        FeaturesCmd::Extract { dir, out } => {
            if !dir.is_dir() {
                return Err(usage(format!("{} is not a directory", dir.display())));
            }
            let mut files = Vec::new();
            collect_wavs(&dir, &mut files)?;
            if files.is_empty() {
                bail!("no .wav files under {}", dir.display());
            }
            // ambiance = first directory level below `dir`, else empty
            let rows = par_map(&files, |p| -> anyhow::Result<Option<FeatureRecord>> {
                let rel = p.strip_prefix(&dir).unwrap_or(p);
                let ambiance = match rel.parent().and_then(|d| d.components().next()) {
                    Some(c) => c.as_os_str().to_string_lossy().into_owned(),
                    None => String::new(),
                };
                let utterance_id = rel.with_extension("").to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/");
                match extract_features(&read_audio(p)?) {
                    Ok(features) => Ok(Some(FeatureRecord { utterance_id, ambiance, features })),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", p.display());
                        Ok(None)
                    }
                }
            });
            let mut records = Vec::new();
            for r in rows {
                records.extend(r?);
            }
            ctx.write(&out, write_features_csv(&records))?;
            log::info!("{} of {} files extracted", records.len(), files.len());
            Ok(())
        }
        FeaturesCmd::Cluster { features, k, report, out } => {
            let records = read_features_csv(&read_text(&features)?)?;
            let (rows, labels): (Vec<Vec<f64>>, Vec<String>) = records
                .iter()
                .filter_map(|r| r.features.complete_row().map(|row| (row, r.ambiance.clone())))
                .unzip();
            if rows.len() < records.len() {
                log::warn!("dropped {} rows with missing features", records.len() - rows.len());
            }
            let mut text = String::new();
            let best_k = if k.0 == k.1 {
                k.0
            } else {
                let sweep = k_sweep(&rows, k.0..=k.1, ctx.seed)?;
                if sweep.is_empty() {
                    bail!("no k in {}..{} fits {} rows", k.0, k.1, rows.len());
                }
                if report {
                    text.push_str(&sweep_report(&sweep));
                }
                sweep
                    .iter()
                    .max_by(|a, b| a.silhouette.total_cmp(&b.silhouette))
                    .map(|r| r.k)
                    .ok_or_else(|| anyhow!("empty sweep"))?
            };
            let model = fit_clusters(&rows, best_k, ctx.seed)?;
            let _ = writeln!(text, "# k={} silhouette={:.6} inertia={:.6}", model.k, model.silhouette, model.inertia);
            text.push_str("ambiance");
            for c in 0..model.k {
                let _ = write!(text, ",cluster_{c}");
            }
            text.push('\n');
            for (amb, shares) in cluster_ambiance_table(&model.assignments, &labels, model.k)? {
                let s: Vec<String> = shares.iter().map(|v| format!("{v:.4}")).collect();
                let _ = writeln!(text, "{amb},{}", s.join(","));
            }
            if let Some(p) = out {
                let json = serde_json::json!({
                    "model": model,
                    "centers_unscaled": model.centers_unscaled(),
                });
                ctx.write(&p, serde_json::to_string_pretty(&json)? + "\n")?;
            }
            print(&text)
        }
    }
}
