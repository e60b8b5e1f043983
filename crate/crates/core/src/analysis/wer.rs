//! Target-word error rates with tense/lax substitution breakdown, and MOS
//! aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::clarity::Style;
use crate::lexicon::normalize_word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVowel {
    Tense,
    Lax,
}

/// One identification of a target word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerResponse {
    pub style: String,
    pub target_word: String,
    pub chosen_word: String,
    pub vowel_class: TargetVowel,
}

/// Symmetric word ↔ word relation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordRelation {
    links: BTreeMap<String, BTreeSet<String>>,
}

impl WordRelation {
    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (normalize_word(a), normalize_word(b));
        self.links.entry(a.clone()).or_default().insert(b.clone());
        self.links.entry(b).or_default().insert(a);
    }

    pub fn related(&self, a: &str, b: &str) -> bool {
        self.links.get(&normalize_word(a)).is_some_and(|s| s.contains(&normalize_word(b)))
    }

    pub fn partners(&self, a: &str) -> impl Iterator<Item = &String> {
        self.links.get(&normalize_word(a)).into_iter().flatten()
    }

    pub fn contains(&self, a: &str) -> bool {
        self.links.contains_key(&normalize_word(a))
    }

    /// Two whitespace-separated words per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let mut rel = WordRelation::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(AnalysisError::Parse {
                    line: i + 1,
                    reason: format!("expected two words, got {}", cols.len()),
                });
            }
            rel.insert(cols[0], cols[1]);
        }
        Ok(rel)
    }
}

pub fn bundled_minimal_pairs() -> WordRelation {
    WordRelation::parse(include_str!("../../data/minimal_pairs.tsv")).expect("bundled pairs parse")
}

pub fn bundled_homophones() -> WordRelation {
    WordRelation::parse(include_str!("../../data/homophones.tsv")).expect("bundled homophones parse")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WerCounts {
    pub total: usize,
    pub errors: usize,
    pub tense_total: usize,
    pub tense_errors: usize,
    pub lax_total: usize,
    pub lax_errors: usize,
    /// Errors where the minimal-pair partner (or a homophone of it) was chosen.
    pub substitutions: usize,
    /// Tense target, lax partner chosen.
    pub lax_for_tense: usize,
    /// Lax target, tense partner chosen.
    pub tense_for_lax: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl WerCounts {
    pub fn wer(&self) -> f64 {
        ratio(self.errors, self.total)
    }
    pub fn tense_wer(&self) -> f64 {
        ratio(self.tense_errors, self.tense_total)
    }
    pub fn lax_wer(&self) -> f64 {
        ratio(self.lax_errors, self.lax_total)
    }
    /// Shares of errors, all in [0, 1].
    pub fn sub_pct(&self) -> f64 {
        ratio(self.substitutions, self.errors)
    }
    pub fn lax_for_tense_pct(&self) -> f64 {
        ratio(self.lax_for_tense, self.errors)
    }
    pub fn tense_for_lax_pct(&self) -> f64 {
        ratio(self.tense_for_lax, self.errors)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub per_style: BTreeMap<Style, WerCounts>,
}

impl WerReport {
    pub fn style(&self, s: Style) -> Option<&WerCounts> {
        self.per_style.get(&s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "style,n,wer,tense_wer,lax_wer,sub_pct,lax_for_tense_pct,tense_for_lax_pct\n",
        );
        for (s, c) in &self.per_style {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.as_str(),
                c.total,
                c.wer(),
                c.tense_wer(),
                c.lax_wer(),
                c.sub_pct(),
                c.lax_for_tense_pct(),
                c.tense_for_lax_pct()
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (s, c) in &self.per_style {
            let _ = writeln!(
                out,
                "{:<9} WER {:6.2}%  tWER {:6.2}%  lWER {:6.2}%  sub {:6.2}%  t-sub {:6.2}%  l-sub {:6.2}%",
                s.as_str(),
                100.0 * c.wer(),
                100.0 * c.tense_wer(),
                100.0 * c.lax_wer(),
                100.0 * c.sub_pct(),
                100.0 * c.lax_for_tense_pct(),
                100.0 * c.tense_for_lax_pct()
            );
        }
        out
    }
}

pub fn wer_report(
    responses: &[WerResponse],
    minimal_pairs: &WordRelation,
    homophones: &WordRelation,
) -> Result<WerReport, AnalysisError> {
    let mut report = WerReport::default();
    for r in responses {
        let style: Style = r.style.parse().map_err(AnalysisError::UnknownStyle)?;
        if !minimal_pairs.contains(&r.target_word) {
            return Err(AnalysisError::MissingPair(r.target_word.clone()));
        }
        let target = normalize_word(&r.target_word);
        let chosen = normalize_word(&r.chosen_word);
        let correct = target == chosen || homophones.related(&target, &chosen);
        let c = report.per_style.entry(style).or_default();
        c.total += 1;
        match r.vowel_class {
            TargetVowel::Tense => c.tense_total += 1,
            TargetVowel::Lax => c.lax_total += 1,
        }
        if correct {
            continue;
        }
        c.errors += 1;
        match r.vowel_class {
            TargetVowel::Tense => c.tense_errors += 1,
            TargetVowel::Lax => c.lax_errors += 1,
        }
        let substituted = minimal_pairs
            .partners(&target)
            .any(|p| *p == chosen || homophones.related(p, &chosen));
        if substituted {
            c.substitutions += 1;
            match r.vowel_class {
                TargetVowel::Tense => c.lax_for_tense += 1,
                TargetVowel::Lax => c.tense_for_lax += 1,
            }
        }
    }
    Ok(report)
}

pub fn read_wer_responses(text: &str) -> Result<Vec<WerResponse>, AnalysisError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AnalysisError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Mean opinion score summary for one (style, item) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosCell {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Groups `(condition, item, score)` ratings into per-cell mean and sample
/// sd (0 for single ratings).
pub fn aggregate_mos<'a>(
    ratings: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
) -> BTreeMap<(String, String), MosCell> {
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (cond, item, v) in ratings {
        cells.entry((cond.to_string(), item.to_string())).or_default().push(v);
    }
    cells
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (k, MosCell { n, mean, sd })
        })
        .collect()
}
