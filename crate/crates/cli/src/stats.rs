//! `analyze` and `eval` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use prosody_core::analysis::stats::{MIN_RESAMPLES, mean};
use prosody_core::analysis::wer::{bundled_homophones, bundled_minimal_pairs, read_wer_responses};
use prosody_core::analysis::{
    aggregate_mos, anova_from_summary, bootstrap_ci, chi_square_gof, group_kernel_tests, kernel_trials_by_participant,
    mean_kernel, one_way_anova, pearson_test, tukey_hsd, wer_report, AnalysisError, AnovaResult, BootstrapOptions,
    ChoiceRecord, Df, GroupSummary, GroupTest, Kernel, KernelKind, KernelTrial, WindowStat, WordRelation,
};
use prosody_core::features::quantile_sorted;
use prosody_core::stimgen::read_manifest;
use prosody_session::{wer_responses_from_export, ExperimentConfig, ResponseRecord};
use serde::Serialize;

use crate::{parse_list, print, read_text, usage, AnalyzeCmd, Ctx, EvalCmd, GroupTestArg, ReportFormat, Statistic};

fn read_jsonl<T: for<'de> serde::Deserialize<'de>>(p: &Path) -> anyhow::Result<Vec<T>> {
    read_text(p)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", p.display(), i + 1)))
        .collect()
}

/// `group,value` rows, groups in order of first appearance.
fn read_groups(p: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(p)?;
    let mut names: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (g, v) = line
            .split_once(',')
            .ok_or_else(|| usage(format!("{} line {}: expected group,value", p.display(), i + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{} line {}: bad value {v:?}", p.display(), i + 1)))?;
        let g = g.trim().to_string();
        match names.iter().position(|n| *n == g) {
            Some(j) => groups[j].push(v),
            None => {
                names.push(g);
                groups.push(vec![v]);
            }
        }
    }
    Ok((names, groups))
}

fn df_str(df: Df) -> String {
    match df {
        Df::One(d) => format!("{d}"),
        Df::Two(a, b) => format!("{a};{b}"),
    }
}

#[derive(Serialize)]
struct ParticipantKernels {
    participant: String,
    n_trials: usize,
    kernels: Vec<Kernel>,
}

#[derive(Serialize)]
struct GroupKernel {
    kernel: Kernel,
    tests: Option<Vec<WindowStat>>,
}

#[derive(Serialize)]
struct KernelReport {
    word_a: String,
    test: GroupTest,
    participants: Vec<ParticipantKernels>,
    skipped_participants: Vec<String>,
    group: Vec<GroupKernel>,
}

fn profiles(trials: &[KernelTrial], kind: KernelKind) -> Option<Vec<(&[f64], bool)>> {
    let rows: Vec<(&[f64], bool)> = trials
        .iter()
        .map(|t| {
            let v = match kind {
                KernelKind::Pitch => t.pitch.as_slice(),
                KernelKind::Stretch => t.stretch.as_slice(),
            };
            (v, t.chose_a)
        })
        .collect();
    rows.iter().all(|r| !r.0.is_empty()).then_some(rows)
}

fn kernels(
    manifest: &Path,
    responses: &Path,
    word_a: Option<String>,
    test: GroupTest,
) -> anyhow::Result<KernelReport> {
    let specs = read_manifest(&read_text(manifest)?).with_context(|| manifest.display().to_string())?;
    let Some(first) = specs.first() else {
        bail!("{} has no trials", manifest.display());
    };
    let word_a = word_a.unwrap_or_else(|| {
        let (a, b) = &first.option_order;
        a.min(b).clone()
    });
    let records: Vec<ChoiceRecord> = read_jsonl(responses)?;
    let offers: BTreeMap<&str, bool> = specs.iter().map(|s| (s.trial_id.as_str(), s.offers(&word_a))).collect();
    let (kept, dropped): (Vec<ChoiceRecord>, Vec<ChoiceRecord>) =
        records.into_iter().partition(|r| offers.get(r.trial_id.as_str()).copied().unwrap_or(true));
    if !dropped.is_empty() {
        log::warn!("ignored {} responses to trials that do not offer {word_a:?}", dropped.len());
    }
    let by_participant = kernel_trials_by_participant(&specs, &kept, &word_a)?;

    let kinds = [KernelKind::Pitch, KernelKind::Stretch];
    let mut participants = Vec::new();
    let mut skipped = Vec::new();
    for (pid, trials) in &by_participant {
        let mut ks = Vec::new();
        let mut degenerate = false;
        for kind in kinds {
            let Some(rows) = profiles(trials, kind) else { continue };
            match prosody_core::analysis::kernel::single_kernel(kind, &rows) {
                Ok(k) => ks.push(k),
                Err(AnalysisError::DegenerateResponder) => degenerate = true,
                Err(e) => return Err(e).with_context(|| format!("participant {pid}")),
            }
        }
        if degenerate {
            log::warn!("participant {pid}: degenerate responder, excluded");
            skipped.push(pid.clone());
            continue;
        }
        participants.push(ParticipantKernels { participant: pid.clone(), n_trials: trials.len(), kernels: ks });
    }
    if participants.is_empty() {
        bail!("no participant produced a kernel");
    }
    let mut group = Vec::new();
    for kind in kinds {
        let ks: Vec<Kernel> = participants
            .iter()
            .filter_map(|p| p.kernels.iter().find(|k| k.kind == kind).cloned())
            .collect();
        if ks.is_empty() {
            continue;
        }
        let tests = if ks.len() >= 2 { Some(group_kernel_tests(&ks, test)?) } else { None };
        let mut kernel = mean_kernel(&ks)?;
        if ks.len() == 1 {
            kernel.windows = ks[0].windows.clone();
        }
        group.push(GroupKernel { kernel, tests });
    }
    Ok(KernelReport { word_a, test, participants, skipped_participants: skipped, group })
}

fn kind_name(k: KernelKind) -> &'static str {
    match k {
        KernelKind::Pitch => "pitch",
        KernelKind::Stretch => "stretch",
    }
}

fn kernel_csv(r: &KernelReport) -> String {
    let mut out = String::from("kind,window,value,t_stat,p_value,ci95_lo,ci95_hi\n");
    for g in &r.group {
        let tests = g.tests.as_ref().or(g.kernel.windows.as_ref());
        for (i, v) in g.kernel.values.iter().enumerate() {
            let _ = write!(out, "{},{i},{v}", kind_name(g.kernel.kind));
            match tests.and_then(|t| t.get(i)) {
                Some(w) => {
                    let _ = writeln!(out, ",{},{},{},{}", w.t_stat, w.p_value, w.ci95_lo, w.ci95_hi);
                }
                None => out.push_str(",,,,\n"),
            }
        }
    }
    out
}

fn kernel_text(r: &KernelReport) -> String {
    let mut out = format!(
        "word A: {}  participants: {} (excluded {})\n",
        r.word_a,
        r.participants.len(),
        r.skipped_participants.len()
    );
    for g in &r.group {
        let _ = writeln!(out, "{} kernel (norm {:.6}):", kind_name(g.kernel.kind), g.kernel.norm());
        for (i, v) in g.kernel.values.iter().enumerate() {
            let _ = write!(out, "  window {i:>2}  {v:+.4}");
            if let Some(w) = g.tests.as_ref().and_then(|t| t.get(i)) {
                let mark = if w.p_value < 0.05 { " *" } else { "" };
                let _ = write!(out, "  t={:+.3}  p={:.4}{mark}", w.t_stat, w.p_value);
            }
            out.push('\n');
        }
    }
    out
}

fn anova_line(r: &AnovaResult) -> String {
    format!(
        "F,df_between,df_within,p_value,omega_squared\n{:.6},{},{},{:e},{:.6}\n",
        r.f, r.df_between, r.df_within, r.p_value, r.omega_squared
    )
}

fn usize_list(s: &str) -> anyhow::Result<Vec<usize>> {
    parse_list(s)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(usage(format!("group size {v} is not a whole number")))
            }
        })
        .collect()
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

pub fn analyze(ctx: &Ctx, cmd: AnalyzeCmd) -> anyhow::Result<()> {
    match cmd {
        AnalyzeCmd::Kernels { manifest, responses, word_a, test, format, out } => {
            let test = match test {
                GroupTestArg::Paired => GroupTest::PairedProfiles,
                GroupTestArg::Zero => GroupTest::KernelVsZero,
            };
            let report = kernels(&manifest, &responses, word_a, test)?;
            if let Some(p) = out {
                ctx.write(&p, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            print(&match format {
                ReportFormat::Csv => kernel_csv(&report),
                ReportFormat::Text => kernel_text(&report),
                ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
            })
        }
        AnalyzeCmd::Anova { groups, n, means, sds } => {
            let r = match (groups, n, means, sds) {
                (Some(p), ..) => one_way_anova(&read_groups(&p)?.1)?,
                (None, Some(n), Some(m), Some(s)) => anova_from_summary(&GroupSummary {
                    n: usize_list(&n)?,
                    means: parse_list(&m)?,
                    sds: parse_list(&s)?,
                })?,
                _ => return Err(usage("pass --groups FILE or --n, --means and --sds")),
            };
            print(&anova_line(&r))
        }
        AnalyzeCmd::Chi2 { counts, expected } => {
            let counts = parse_list(&counts)?;
            let expected = expected.map(|e| parse_list(&e)).transpose()?;
            let r = chi_square_gof(&counts, expected.as_deref())?;
            print(&format!("statistic,df,p_value\n{:.6},{},{:e}\n", r.statistic, df_str(r.df), r.p_value))
        }
        AnalyzeCmd::Tukey { groups, alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(usage("--alpha must be in (0, 1)"));
            }
            let (names, groups) = read_groups(&groups)?;
            let mut out = String::from("group_a,group_b,mean_diff,q,p_value,ci_lo,ci_hi,reject\n");
            for p in tukey_hsd(&groups, alpha)? {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:e},{:.6},{:.6},{}",
                    names[p.group_a], names[p.group_b], p.mean_diff, p.q, p.p_value, p.ci.0, p.ci.1, p.reject
                );
            }
            print(&out)
        }
        AnalyzeCmd::Bootstrap { data, statistic, level, resamples } => {
            if resamples < MIN_RESAMPLES {
                return Err(usage(format!("--resamples must be >= {MIN_RESAMPLES}")));
            }
            let x = parse_list(&read_text(&data)?)?;
            let opts = BootstrapOptions { level, resamples, seed: ctx.seed };
            let f: fn(&[f64]) -> f64 = match statistic {
                Statistic::Mean => mean,
                Statistic::Median => median,
            };
            let (lo, hi) = bootstrap_ci(&x, f, opts)?;
            print(&format!("estimate,ci_lo,ci_hi,level\n{:.6},{lo:.6},{hi:.6},{level}\n", f(&x)))
        }
        AnalyzeCmd::Pearson { data } => {
            let text = read_text(&data)?;
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
                let v = parse_list(line)?;
                if v.len() != 2 {
                    return Err(usage(format!("{} line {}: expected two columns", data.display(), i + 1)));
                }
                x.push(v[0]);
                y.push(v[1]);
            }
            let r = pearson_test(&x, &y)?;
            print(&format!("r,df,p_value\n{:.6},{},{:e}\n", r.statistic, df_str(r.df), r.p_value))
        }
    }
}

fn relation(p: Option<&Path>, bundled: fn() -> WordRelation) -> anyhow::Result<WordRelation> {
    match p {
        None => Ok(bundled()),
        Some(p) => WordRelation::parse(&read_text(p)?).with_context(|| p.display().to_string()),
    }
}

pub fn eval(_ctx: &Ctx, cmd: EvalCmd) -> anyhow::Result<()> {
    match cmd {
        EvalCmd::Wer { responses, export, config, pairs, homophones, format } => {
            let rs = match (responses, export, config) {
                (Some(r), ..) => read_wer_responses(&read_text(&r)?).with_context(|| r.display().to_string())?,
                (None, Some(e), Some(c)) => {
                    let cfg = ExperimentConfig::load(&c)?;
                    wer_responses_from_export(&read_text(&e)?, &cfg)?
                }
                _ => return Err(usage("pass --responses, or --export with --config")),
            };
            let mp = relation(pairs.as_deref(), bundled_minimal_pairs)?;
            let hp = relation(homophones.as_deref(), bundled_homophones)?;
            let report = wer_report(&rs, &mp, &hp)?;
            print(&match format {
                ReportFormat::Csv => report.to_csv(),
                ReportFormat::Text => report.summary(),
                ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
            })
        }
        EvalCmd::Mos { export, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let records: Vec<ResponseRecord> = read_jsonl(&export)?;
            let mut ratings: Vec<(String, String, f64)> = Vec::new();
            for r in &records {
                let cond = cfg.wer_targets.get(&r.trial_id).map_or("all", |t| t.style.as_str());
                for (item, v) in &r.mos {
                    ratings.push((cond.to_string(), item.clone(), *v as f64));
                }
            }
            let cells = aggregate_mos(ratings.iter().map(|(c, i, v)| (c.as_str(), i.as_str(), *v)));
            let mut out = String::from("condition,item,n,mean,sd\n");
            for ((c, i), cell) in cells {
                let _ = writeln!(out, "{c},{i},{},{:.4},{:.4}", cell.n, cell.mean, cell.sd);
            }
            print(&out)
        }
    }
}
