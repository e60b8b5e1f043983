//! L2 clarity duration planning.
//!
//! Text is split into tokens, optionally with `!word!` clarity markup and a
//! trailing emoji style tag. Words are phonemized through the lexicon and
//! each target word is classified as stretched (tense vowel), held at the
//! base rate (lax vowel) or ignored. The result is a per-phoneme multiplier
//! array (`c_array`) that is combined with the predicted durations by
//! [`apply_durations`]:
//!
//! ```text
//! w          = exp(log_w) ⊙ x_mask
//! y_lengths  = ceil(w) ⊙ speechrate ⊙ c_array
//! y_max_len  = max(1, Σ y_lengths)
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{word_vowel_profile, Lexicon, LexiconEntry, Phoneme, PhonemeSeq};

const DEFAULT_FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClarityError {
    #[error("unbalanced clarity delimiter at offset {0}")]
    UnbalancedDelimiter(usize),
    #[error("word not in lexicon: {0}")]
    Unphonemizable(String),
    #[error("array length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("x_mask must be 0 or 1, got {0}")]
    BadMask(f64),
    #[error("invalid clarity config: {0}")]
    InvalidConfig(String),
}

/// One whitespace-delimited token of the input text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub clarity_flagged: bool,
}

impl Token {
    /// The surface form reduced to what the lexicon is keyed on: letters and
    /// inner apostrophes, lowercased.
    pub fn lexical_form(&self) -> String {
        let s: String = self
            .surface
            .replace('\u{2019}', "'")
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == '\'')
            .collect();
        s.trim_matches('\'').to_lowercase()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedText {
    pub tokens: Vec<Token>,
    pub emoji_tag: Option<String>,
    pub raw: String,
}

impl MarkedText {
    /// Tokens without markup, all unflagged.
    pub fn plain(text: &str) -> Self {
        MarkedText {
            tokens: text
                .split_whitespace()
                .map(|s| Token {
                    surface: s.to_string(),
                    clarity_flagged: false,
                })
                .collect(),
            emoji_tag: None,
            raw: text.to_string(),
        }
    }
}

fn is_emoji_part(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B00..=0x2BFF | 0x2300..=0x23FF
        | 0xFE0F | 0x200D | 0xE0020..=0xE007F)
}

/// Parses `!word!` clarity spans and a trailing emoji tag.
pub fn parse_marked_text(raw: &str) -> Result<MarkedText, ClarityError> {
    let trimmed = raw.trim_end();
    let chars: Vec<char> = trimmed.chars().collect();
    let mut cut = chars.len();
    while cut > 0 && is_emoji_part(chars[cut - 1]) {
        cut -= 1;
    }
    // A lone joiner or variation selector is not a tag.
    let tag: String = chars[cut..].iter().collect();
    let emoji_tag = tag
        .chars()
        .any(|c| !matches!(c as u32, 0xFE0F | 0x200D))
        .then_some(tag);
    let body = &chars[..if emoji_tag.is_some() { cut } else { chars.len() }];

    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_flagged = false;
    let mut in_span = false;
    let mut open_at = 0usize;
    let flush = |tokens: &mut Vec<Token>, current: &mut String, flagged: bool| {
        if !current.is_empty() {
            tokens.push(Token {
                surface: std::mem::take(current),
                clarity_flagged: flagged,
            });
        }
    };
    for (offset, &c) in body.iter().enumerate() {
        if c == '!' {
            if in_span {
                in_span = false;
            } else {
                in_span = true;
                open_at = offset;
            }
            continue;
        }
        if c.is_whitespace() {
            flush(&mut tokens, &mut current, current_flagged);
            current_flagged = false;
            continue;
        }
        if current.is_empty() {
            current_flagged = in_span;
        } else if in_span {
            current_flagged = true;
        }
        current.push(c);
    }
    if in_span {
        return Err(ClarityError::UnbalancedDelimiter(open_at));
    }
    flush(&mut tokens, &mut current, current_flagged);
    Ok(MarkedText {
        tokens,
        emoji_tag,
        raw: raw.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarityMode {
    /// Only `!flagged!` words are considered.
    Markup,
    /// Every word is considered, minus function words, diphthong words and
    /// words ending in /i/.
    AutoPilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarityConfig {
    pub stretch_factor: f64,
    pub base_rate: f64,
    /// Number of phonemes the ramp spans on each side of a stretched word.
    pub ramp_len: usize,
    pub mode: ClarityMode,
    pub function_words: BTreeSet<String>,
}

impl Default for ClarityConfig {
    fn default() -> Self {
        ClarityConfig {
            stretch_factor: 1.6,
            base_rate: 0.75,
            ramp_len: 6,
            mode: ClarityMode::Markup,
            function_words: parse_word_list(DEFAULT_FUNCTION_WORDS),
        }
    }
}

impl ClarityConfig {
    pub fn validate(&self) -> Result<(), ClarityError> {
        if !(self.stretch_factor.is_finite() && self.stretch_factor > 1.0) {
            return Err(ClarityError::InvalidConfig(format!(
                "stretch_factor must be > 1, got {}",
                self.stretch_factor
            )));
        }
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return Err(ClarityError::InvalidConfig(format!(
                "base_rate must be > 0, got {}",
                self.base_rate
            )));
        }
        Ok(())
    }
}

/// One word per line; `#` starts a comment.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Stretch,
    Hold,
    Ignore,
}

/// Clarity rule for one word. `entry` is `None` for out-of-lexicon words,
/// which are left untouched.
pub fn decide_clarity(word: &str, entry: Option<&LexiconEntry>, config: &ClarityConfig) -> Decision {
    let Some(entry) = entry else {
        warn!("{word:?} is not in the lexicon; leaving it unmodified");
        return Decision::Ignore;
    };
    let profile = word_vowel_profile(entry);
    if config.mode == ClarityMode::AutoPilot
        && (config.function_words.contains(&entry.word)
            || profile.has_diphthong
            || profile.ends_in_iy)
    {
        return Decision::Ignore;
    }
    match (profile.has_tense, profile.has_lax) {
        (true, false) => Decision::Stretch,
        (true, true) if profile.tense_has_primary_stress => Decision::Stretch,
        // Mixed words whose tense vowel is unstressed behave like lax words.
        (true, true) | (false, true) => Decision::Hold,
        (false, false) => Decision::Ignore,
    }
}

/// Maps a word to its phoneme sequence.
pub trait Phonemizer {
    fn phonemize(&self, word: &str) -> Option<&LexiconEntry>;
}

impl Phonemizer for Lexicon {
    fn phonemize(&self, word: &str) -> Option<&LexiconEntry> {
        self.get(word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    TenseStretch,
    LaxHold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpan {
    /// First phoneme index (inclusive).
    pub start: usize,
    /// One past the last phoneme index.
    pub end: usize,
    pub kind: SpanKind,
    pub word: String,
}

/// Role of a single phoneme within a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Base,
    Ramp,
    TenseStretch,
    LaxHold,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Base => "none",
            Region::Ramp => "ramp",
            Region::TenseStretch => "tense_stretch",
            Region::LaxHold => "lax_hold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationPlan {
    pub phonemes: Vec<Phoneme>,
    pub multipliers: Vec<f64>,
    pub regions: Vec<Region>,
    pub target_spans: Vec<TargetSpan>,
    pub base_rate: f64,
}

impl DurationPlan {
    pub fn identity(phonemes: Vec<Phoneme>, base_rate: f64) -> Self {
        let n = phonemes.len();
        DurationPlan {
            phonemes,
            multipliers: vec![1.0; n],
            regions: vec![Region::Base; n],
            target_spans: Vec::new(),
            base_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// The clarity array of the duration equation.
    pub fn c_array(&self) -> &[f64] {
        &self.multipliers
    }

    /// Uniform base speech-rate array of matching length.
    pub fn speechrate(&self) -> Vec<f64> {
        vec![self.base_rate; self.len()]
    }

    /// Columnar text: `phoneme,multiplier,span_kind`, one row per phoneme.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phoneme,multiplier,span_kind\n");
        for ((p, m), r) in self.phonemes.iter().zip(&self.multipliers).zip(&self.regions) {
            let _ = writeln!(out, "{p},{m},{}", r.as_str());
        }
        out
    }
}

struct WordSlot<'a> {
    token: &'a Token,
    start: usize,
    end: usize,
}

type Phonemized<'a> = (Vec<Phoneme>, Vec<(WordSlot<'a>, &'a LexiconEntry)>);

fn phonemize_tokens<'a, P: Phonemizer>(
    marked: &'a MarkedText,
    phonemizer: &'a P,
) -> Result<Phonemized<'a>, ClarityError> {
    let mut phonemes = Vec::new();
    let mut slots = Vec::new();
    for token in &marked.tokens {
        let form = token.lexical_form();
        if form.is_empty() {
            continue;
        }
        let entry = phonemizer
            .phonemize(&form)
            .ok_or_else(|| ClarityError::Unphonemizable(form.clone()))?;
        if entry.pronunciations.len() > 1 {
            log::debug!("{form}: using primary of {} pronunciations", entry.pronunciations.len());
        }
        let seq: &PhonemeSeq = entry.primary();
        let start = phonemes.len();
        phonemes.extend(seq.phonemes().iter().cloned());
        slots.push((
            WordSlot {
                token,
                start,
                end: phonemes.len(),
            },
            entry,
        ));
    }
    Ok((phonemes, slots))
}

/// Builds the plan for already-decided words. `decisions` is aligned with
/// the word slots; `None` means "not a target".
fn plan_from_decisions(
    phonemes: Vec<Phoneme>,
    slots: &[(WordSlot<'_>, &LexiconEntry)],
    decisions: &[Option<Decision>],
    config: &ClarityConfig,
) -> DurationPlan {
    let n = phonemes.len();
    let mut plan = DurationPlan::identity(phonemes, config.base_rate);
    let sf = config.stretch_factor;

    // (start, end, decision) for every target that is stretched or held.
    let targets: Vec<(usize, usize, Decision, &str)> = slots
        .iter()
        .zip(decisions)
        .filter_map(|((slot, entry), d)| match d {
            Some(d @ (Decision::Stretch | Decision::Hold)) => {
                Some((slot.start, slot.end, *d, entry.word.as_str()))
            }
            _ => None,
        })
        .collect();

    for (i, &(start, end, decision, _)) in targets.iter().enumerate() {
        if decision != Decision::Stretch {
            continue;
        }
        let before = match i.checked_sub(1).map(|j| targets[j]) {
            None => start,
            Some((_, prev_end, Decision::Stretch, _)) => {
                let gap = start - prev_end;
                gap - gap / 2
            }
            Some((_, prev_end, _, _)) => start - prev_end,
        };
        let after = match targets.get(i + 1) {
            None => n - end,
            Some(&(next_start, _, Decision::Stretch, _)) => (next_start - end) / 2,
            Some(&(next_start, _, _, _)) => next_start - end,
        };
        let lb = config.ramp_len.min(before);
        let la = config.ramp_len.min(after);
        for j in 1..=lb {
            let idx = start - j;
            plan.multipliers[idx] = ramp_value(sf, j, lb);
            plan.regions[idx] = Region::Ramp;
        }
        for j in 1..=la {
            let idx = end + j - 1;
            plan.multipliers[idx] = ramp_value(sf, j, la);
            plan.regions[idx] = Region::Ramp;
        }
    }

    for &(start, end, decision, word) in &targets {
        let (value, region, kind) = match decision {
            Decision::Stretch => (sf, Region::TenseStretch, SpanKind::TenseStretch),
            _ => (1.0, Region::LaxHold, SpanKind::LaxHold),
        };
        for idx in start..end {
            plan.multipliers[idx] = value;
            plan.regions[idx] = region;
        }
        plan.target_spans.push(TargetSpan {
            start,
            end,
            kind,
            word: word.to_string(),
        });
    }
    plan
}

/// Multiplier `distance` phonemes away from a stretched word when the ramp
/// spans `len` phonemes: linear from `sf` (at distance 0) down to 1.0 (at
/// distance `len + 1`).
fn ramp_value(sf: f64, distance: usize, len: usize) -> f64 {
    1.0 + (sf - 1.0) * (len + 1 - distance) as f64 / (len + 1) as f64
}

pub fn build_duration_plan<P: Phonemizer>(
    marked: &MarkedText,
    phonemizer: &P,
    config: &ClarityConfig,
) -> Result<DurationPlan, ClarityError> {
    config.validate()?;
    let (phonemes, slots) = phonemize_tokens(marked, phonemizer)?;
    let decisions: Vec<Option<Decision>> = slots
        .iter()
        .map(|(slot, entry)| {
            let candidate = match config.mode {
                ClarityMode::Markup => slot.token.clarity_flagged,
                ClarityMode::AutoPilot => true,
            };
            candidate.then(|| decide_clarity(&entry.word, Some(entry), config))
        })
        .collect();
    Ok(plan_from_decisions(phonemes, &slots, &decisions, config))
}

/// Output of the duration equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedDurations {
    pub y_lengths: Vec<f64>,
    pub y_max_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationApplication {
    pub log_w: Vec<f64>,
    pub x_mask: Vec<f64>,
    pub speechrate: Vec<f64>,
    pub c_array: Vec<f64>,
}

/// `ceil` that absorbs round-off: `exp(ln 3)` evaluates to
/// 3.0000000000000004 and must still map to 3.
fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

pub fn apply_durations(app: &DurationApplication) -> Result<AppliedDurations, ClarityError> {
    let n = app.log_w.len();
    for (name, len) in [
        ("x_mask", app.x_mask.len()),
        ("speechrate", app.speechrate.len()),
        ("c_array", app.c_array.len()),
    ] {
        if len != n {
            return Err(ClarityError::LengthMismatch(format!(
                "log_w has {n} items, {name} has {len}"
            )));
        }
    }
    for (name, v) in [
        ("log_w", &app.log_w),
        ("x_mask", &app.x_mask),
        ("speechrate", &app.speechrate),
        ("c_array", &app.c_array),
    ] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClarityError::NonFinite(name));
        }
    }
    if let Some(&m) = app.x_mask.iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(ClarityError::BadMask(m));
    }
    let y_lengths: Vec<f64> = (0..n)
        .map(|i| {
            let w = app.log_w[i].exp() * app.x_mask[i];
            ceil_tolerant(w) * app.speechrate[i] * app.c_array[i]
        })
        .collect();
    let total: f64 = y_lengths.iter().sum();
    Ok(AppliedDurations {
        y_max_length: total.max(1.0),
        y_lengths,
    })
}

/// Word/context duration multiplier pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridStep {
    pub word: f64,
    pub context: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCondition {
    ContextAndWord,
    WordOnly,
    ContextOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationGrid {
    pub context_and_word: Vec<GridStep>,
    pub word_only: Vec<GridStep>,
    pub context_only: Vec<GridStep>,
}

impl ValidationGrid {
    pub fn steps(&self, condition: GridCondition) -> &[GridStep] {
        match condition {
            GridCondition::ContextAndWord => &self.context_and_word,
            GridCondition::WordOnly => &self.word_only,
            GridCondition::ContextOnly => &self.context_only,
        }
    }
}

/// The eleven opposed word/context steps, from (2.0, 1/1.5) to (0.5, 1.5).
///
/// Lengthening steps run 1.2..2.0 by 0.2 in the word against reciprocal
/// context steps 1/1.1..1/1.5; shortening steps mirror them, giving reported
/// labels such as 0.83x/w-1.1x/c and 0.67x/c-2.0x/w.
pub fn build_validation_grid() -> ValidationGrid {
    let mut context_and_word = Vec::with_capacity(11);
    for i in (1..=5).rev() {
        let word = 1.0 + 0.2 * i as f64;
        let context = 1.0 / (1.0 + 0.1 * i as f64);
        context_and_word.push(GridStep { word, context });
    }
    context_and_word.push(GridStep {
        word: 1.0,
        context: 1.0,
    });
    for i in 1..=5 {
        let word = 1.0 / (1.0 + 0.2 * i as f64);
        let context = 1.0 + 0.1 * i as f64;
        context_and_word.push(GridStep { word, context });
    }
    let word_only = context_and_word
        .iter()
        .map(|s| GridStep {
            word: s.word,
            context: 1.0,
        })
        .collect();
    let context_only = context_and_word
        .iter()
        .map(|s| GridStep {
            word: 1.0,
            context: s.context,
        })
        .collect();
    ValidationGrid {
        context_and_word,
        word_only,
        context_only,
    }
}

/// Plan for one validation stimulus: `context` on every phoneme before the
/// target word's first phoneme, `word` from there to the end.
pub fn validation_plan(
    phonemes: Vec<Phoneme>,
    target_start: usize,
    step: GridStep,
    base_rate: f64,
) -> DurationPlan {
    let n = phonemes.len();
    let mut plan = DurationPlan::identity(phonemes, base_rate);
    let split = target_start.min(n);
    for (i, m) in plan.multipliers.iter_mut().enumerate() {
        *m = if i < split { step.context } else { step.word };
    }
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    /// Base rate everywhere.
    Base,
    /// Stretch factor over the whole phrase.
    Stretch,
    /// Stretch factor on every target word.
    Emphasis,
    /// Stretch only the targets the clarity rules select.
    Clarity,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Base, Style::Stretch, Style::Emphasis, Style::Clarity];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Base => "base",
            Style::Stretch => "stretch",
            Style::Emphasis => "emphasis",
            Style::Clarity => "clarity",
        }
    }
}

impl std::str::FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Style::Base),
            "stretch" => Ok(Style::Stretch),
            "emphasis" => Ok(Style::Emphasis),
            "clarity" => Ok(Style::Clarity),
            other => Err(format!("unknown style {other:?}")),
        }
    }
}

/// Plan for one of the four comparison styles. Target words are the
/// `!flagged!` tokens of `marked`.
pub fn build_style_plan<P: Phonemizer>(
    marked: &MarkedText,
    phonemizer: &P,
    config: &ClarityConfig,
    style: Style,
) -> Result<DurationPlan, ClarityError> {
    config.validate()?;
    let (phonemes, slots) = phonemize_tokens(marked, phonemizer)?;
    match style {
        Style::Base => Ok(DurationPlan::identity(phonemes, config.base_rate)),
        Style::Stretch => {
            let mut plan = DurationPlan::identity(phonemes, config.base_rate);
            plan.multipliers.fill(config.stretch_factor);
            plan.regions.fill(Region::TenseStretch);
            Ok(plan)
        }
        Style::Emphasis => {
            let decisions: Vec<_> = slots
                .iter()
                .map(|(s, _)| s.token.clarity_flagged.then_some(Decision::Stretch))
                .collect();
            Ok(plan_from_decisions(phonemes, &slots, &decisions, config))
        }
        Style::Clarity => {
            let markup = ClarityConfig {
                mode: ClarityMode::Markup,
                ..config.clone()
            };
            build_duration_plan(marked, phonemizer, &markup)
        }
    }
}
