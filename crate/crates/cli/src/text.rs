//! `lexicon` and `clarity` subcommands.

use std::fmt::Write as _;

use anyhow::{bail, Context};
use prosody_core::clarity::{
    self, apply_durations, build_duration_plan, build_style_plan, build_validation_grid, decide_clarity,
    parse_marked_text, ClarityConfig, ClarityMode, DurationApplication, DurationPlan, GridCondition, Style,
};
use prosody_core::lexicon::{parse_lexicon, word_vowel_profile, Lexicon};
use serde_json::json;

use crate::{parse_list, print, read_text, usage, ClarityCmd, ClarityOpts, Ctx, DictArg, LexiconCmd, ModeArg, OnOff, PlanFormat};

fn load_lexicon(d: &DictArg) -> anyhow::Result<Lexicon> {
    match &d.dict {
        None => Ok(Lexicon::bundled()),
        Some(p) => parse_lexicon(&read_text(p)?).with_context(|| p.display().to_string()),
    }
}

fn clarity_config(o: &ClarityOpts, mode: ModeArg) -> anyhow::Result<ClarityConfig> {
    let mut cfg = ClarityConfig {
        stretch_factor: o.stretch_factor,
        base_rate: o.base_rate,
        ramp_len: o.ramp_len,
        mode: match mode {
            ModeArg::Markup => ClarityMode::Markup,
            ModeArg::Auto => ClarityMode::AutoPilot,
        },
        ..ClarityConfig::default()
    };
    if let Some(p) = &o.function_words {
        cfg.function_words = clarity::parse_word_list(&read_text(p)?);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn lexicon(_ctx: &Ctx, cmd: LexiconCmd) -> anyhow::Result<()> {
    match cmd {
        LexiconCmd::Check { dict, words } => {
            let lex = load_lexicon(&dict)?;
            let missing: Vec<&String> = words.iter().filter(|w| lex.get(w).is_none()).collect();
            let mut out = format!("{} entries\n", lex.len());
            for w in &missing {
                let _ = writeln!(out, "missing {w}");
            }
            print(&out)?;
            if !missing.is_empty() {
                bail!("{} of {} words missing from the lexicon", missing.len(), words.len());
            }
            Ok(())
        }
        LexiconCmd::Show { dict, words } => {
            let lex = load_lexicon(&dict)?;
            let markup = ClarityConfig::default();
            let auto = ClarityConfig { mode: ClarityMode::AutoPilot, ..ClarityConfig::default() };
            let mut out = String::new();
            let mut missing = 0;
            for w in &words {
                let Some(entry) = lex.get(w) else {
                    missing += 1;
                    let _ = writeln!(out, "{}", json!({ "word": w, "found": false }));
                    continue;
                };
                let prons: Vec<String> = entry.pronunciations.iter().map(|p| p.to_string()).collect();
                let line = json!({
                    "word": entry.word,
                    "found": true,
                    "pronunciations": prons,
                    "profile": word_vowel_profile(entry),
                    "decision_markup": decide_clarity(w, Some(entry), &markup),
                    "decision_auto": decide_clarity(w, Some(entry), &auto),
                });
                let _ = writeln!(out, "{line}");
            }
            print(&out)?;
            if missing > 0 {
                bail!("{missing} word(s) not in the lexicon");
            }
            Ok(())
        }
    }
}

fn plan_csv(plan: &DurationPlan, format: PlanFormat) -> String {
    match format {
        PlanFormat::Csv => plan.to_csv(),
        PlanFormat::Json => serde_json::to_string_pretty(plan).expect("plan serializes") + "\n",
    }
}

pub fn clarity(_ctx: &Ctx, cmd: ClarityCmd) -> anyhow::Result<()> {
    match cmd {
        ClarityCmd::Plan { text, clarity, mode, format, opts } => {
            let cfg = clarity_config(&opts, mode)?;
            let lex = load_lexicon(&opts.dict)?;
            let marked = parse_marked_text(&text).map_err(|e| usage(e.to_string()))?;
            let plan = match clarity {
                OnOff::On => build_duration_plan(&marked, &lex, &cfg)?,
                OnOff::Off => build_style_plan(&marked, &lex, &cfg, Style::Base)?,
            };
            print(&plan_csv(&plan, format))
        }
        ClarityCmd::Grid => {
            let grid = build_validation_grid();
            let mut out = String::from("condition,step,word,context\n");
            for (name, cond) in [
                ("context_and_word", GridCondition::ContextAndWord),
                ("word_only", GridCondition::WordOnly),
                ("context_only", GridCondition::ContextOnly),
            ] {
                for (i, s) in grid.steps(cond).iter().enumerate() {
                    let _ = writeln!(out, "{name},{i},{},{}", s.word, s.context);
                }
            }
            print(&out)
        }
        ClarityCmd::Styles { text, opts } => {
            let cfg = clarity_config(&opts, ModeArg::Markup)?;
            let lex = load_lexicon(&opts.dict)?;
            let marked = parse_marked_text(&text).map_err(|e| usage(e.to_string()))?;
            let mut out = String::from("style,phoneme,multiplier,span_kind\n");
            for style in Style::ALL {
                let plan = build_style_plan(&marked, &lex, &cfg, style)?;
                for line in plan.to_csv().lines().skip(1) {
                    let _ = writeln!(out, "{},{line}", style.as_str());
                }
            }
            print(&out)
        }
        ClarityCmd::Durations { log_w, mask, speechrate, c_array } => {
            let log_w = parse_list(&log_w)?;
            let n = log_w.len();
            let or_ones = |s: Option<String>| -> anyhow::Result<Vec<f64>> {
                s.map(|s| parse_list(&s)).unwrap_or_else(|| Ok(vec![1.0; n]))
            };
            let app = DurationApplication {
                log_w,
                x_mask: or_ones(mask)?,
                speechrate: or_ones(speechrate)?,
                c_array: or_ones(c_array)?,
            };
            let r = apply_durations(&app).map_err(|e| usage(e.to_string()))?;
            let lens: Vec<String> = r.y_lengths.iter().map(|v| v.to_string()).collect();
            print(&format!("y_lengths,{}\ny_max_length,{}\n", lens.join(","), r.y_max_length))
        }
    }
}
