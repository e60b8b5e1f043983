//! Pronunciation lexicon and tense/lax vowel classification.
//!
//! Dictionary files use the CMU layout: one `WORD  PH1 PH2 ...` line per
//! pronunciation, two or more spaces (or a tab) between the headword and the
//! phonemes, `;;;` comment lines, and `WORD(k)` for alternate pronunciations.
//! Vowels carry a stress digit (`IY1`), consonants never do.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.dict");

const VOWELS: &[&str] = &[
    "AA", "AE", "AH", "AO", "AW", "AX", "AXR", "AY", "EH", "ER", "EY", "IH", "IX", "IY", "OW",
    "OY", "UH", "UW", "UX",
];

const CONSONANTS: &[&str] = &[
    "B", "CH", "D", "DH", "DX", "EL", "EM", "EN", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG",
    "NX", "P", "Q", "R", "S", "SH", "T", "TH", "V", "W", "WH", "Y", "Z", "ZH",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: unknown phoneme {token}")]
    UnknownPhoneme { line: usize, token: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Lexical stress level of a vowel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stress {
    Unstressed = 0,
    Primary = 1,
    Secondary = 2,
}

/// One ARPABET segment. Construct through [`Phoneme::from_str`] so the
/// stress/vowel invariant holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phoneme {
    symbol: String,
    stress: Option<Stress>,
}

impl Phoneme {
    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn stress(&self) -> Option<Stress> {
        self.stress
    }

    pub fn is_vowel(&self) -> bool {
        self.stress.is_some()
    }

    pub fn class(&self) -> VowelClass {
        classify_vowel(self)
    }
}

/// Why a token failed to parse as a phoneme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhonemeParseError {
    Unknown(String),
    MissingStress(String),
    UnexpectedStress(String),
}

impl fmt::Display for PhonemeParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhonemeParseError::Unknown(t) => write!(f, "unknown phoneme {t}"),
            PhonemeParseError::MissingStress(t) => write!(f, "vowel {t} needs a stress digit"),
            PhonemeParseError::UnexpectedStress(t) => {
                write!(f, "consonant {t} cannot carry stress")
            }
        }
    }
}

impl std::error::Error for PhonemeParseError {}

impl FromStr for Phoneme {
    type Err = PhonemeParseError;

    fn from_str(token: &str) -> Result<Self, Self::Err> {
        let upper = token.to_ascii_uppercase();
        let (base, digit) = match upper.as_bytes().last() {
            Some(b @ b'0'..=b'9') => (&upper[..upper.len() - 1], Some(b - b'0')),
            _ => (upper.as_str(), None),
        };
        if VOWELS.contains(&base) {
            let stress = match digit {
                Some(0) => Stress::Unstressed,
                Some(1) => Stress::Primary,
                Some(2) => Stress::Secondary,
                Some(_) => return Err(PhonemeParseError::Unknown(token.to_string())),
                None => return Err(PhonemeParseError::MissingStress(token.to_string())),
            };
            Ok(Phoneme {
                symbol: base.to_string(),
                stress: Some(stress),
            })
        } else if CONSONANTS.contains(&base) {
            if digit.is_some() {
                return Err(PhonemeParseError::UnexpectedStress(token.to_string()));
            }
            Ok(Phoneme {
                symbol: base.to_string(),
                stress: None,
            })
        } else {
            // Report the base symbol: "QQ1" is an unknown "QQ".
            let name = if VOWELS.contains(&upper.as_str()) || digit.is_none() {
                upper.clone()
            } else {
                base.to_string()
            };
            Err(PhonemeParseError::Unknown(name))
        }
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stress {
            Some(s) => write!(f, "{}{}", self.symbol, s as u8),
            None => f.write_str(&self.symbol),
        }
    }
}

/// Vowel categories used by the clarity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VowelClass {
    Tense,
    Lax,
    Diphthong,
    OtherVowel,
    NotVowel,
}

/// Tense = IY UW AA, lax = IH UH AH, diphthongs = AY AW OY EY OW.
pub fn classify_vowel(p: &Phoneme) -> VowelClass {
    if !p.is_vowel() {
        return VowelClass::NotVowel;
    }
    match p.symbol() {
        "IY" | "UW" | "AA" => VowelClass::Tense,
        "IH" | "UH" | "AH" => VowelClass::Lax,
        "AY" | "AW" | "OY" | "EY" | "OW" => VowelClass::Diphthong,
        _ => VowelClass::OtherVowel,
    }
}

/// A nonempty phoneme sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhonemeSeq(Vec<Phoneme>);

impl PhonemeSeq {
    /// Returns `None` for an empty sequence.
    pub fn new(phonemes: Vec<Phoneme>) -> Option<Self> {
        (!phonemes.is_empty()).then_some(PhonemeSeq(phonemes))
    }

    pub fn phonemes(&self) -> &[Phoneme] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl FromStr for PhonemeSeq {
    type Err = PhonemeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let phonemes = s
            .split_whitespace()
            .map(Phoneme::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        PhonemeSeq::new(phonemes).ok_or_else(|| PhonemeParseError::Unknown(String::new()))
    }
}

impl fmt::Display for PhonemeSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    /// First entry is the primary pronunciation.
    pub pronunciations: Vec<PhonemeSeq>,
}

impl LexiconEntry {
    pub fn primary(&self) -> &PhonemeSeq {
        &self.pronunciations[0]
    }
}

/// Booleans over the primary pronunciation that drive clarity decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VowelProfile {
    pub has_tense: bool,
    pub has_lax: bool,
    pub tense_has_primary_stress: bool,
    pub ends_in_iy: bool,
    pub has_diphthong: bool,
}

pub fn word_vowel_profile(entry: &LexiconEntry) -> VowelProfile {
    let phonemes = entry.primary().phonemes();
    let mut profile = VowelProfile::default();
    for p in phonemes {
        match classify_vowel(p) {
            VowelClass::Tense => {
                profile.has_tense = true;
                if p.stress() == Some(Stress::Primary) {
                    profile.tense_has_primary_stress = true;
                }
            }
            VowelClass::Lax => profile.has_lax = true,
            VowelClass::Diphthong => profile.has_diphthong = true,
            _ => {}
        }
    }
    profile.ends_in_iy = phonemes.last().is_some_and(|p| p.symbol() == "IY");
    profile
}

/// Immutable word → entry map with case-insensitive lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl Lexicon {
    /// The lexicon shipped with the crate; covers the stimulus vocabulary.
    pub fn bundled() -> Self {
        parse_lexicon(BUNDLED_LEXICON).expect("bundled lexicon parses")
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(&normalize_word(word))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    /// Canonical dictionary text: uppercase headwords, variants numbered
    /// from 1, sorted by word.
    pub fn to_dict_string(&self) -> String {
        let mut out = String::new();
        for entry in self.entries.values() {
            let head = entry.word.to_uppercase();
            for (i, pron) in entry.pronunciations.iter().enumerate() {
                if i == 0 {
                    out.push_str(&format!("{head}  {pron}\n"));
                } else {
                    out.push_str(&format!("{head}({i})  {pron}\n"));
                }
            }
        }
        out
    }
}

/// Lowercases and folds typographic apostrophes.
pub fn normalize_word(word: &str) -> String {
    word.trim().replace('\u{2019}', "'").to_lowercase()
}

pub fn parse_lexicon(source: &str) -> Result<Lexicon, LexiconError> {
    let mut entries: BTreeMap<String, LexiconEntry> = BTreeMap::new();
    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() || line.starts_with(";;;") {
            continue;
        }
        let (head, rest) = split_head(line).ok_or_else(|| LexiconError::Malformed {
            line: line_no,
            reason: "expected `WORD  PHONEMES` with two or more spaces".into(),
        })?;
        let word = strip_variant(head).ok_or_else(|| LexiconError::Malformed {
            line: line_no,
            reason: format!("bad variant suffix in {head:?}"),
        })?;
        let word = normalize_word(word);
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(LexiconError::Malformed {
                line: line_no,
                reason: "empty headword".into(),
            });
        }
        let phonemes = rest
            .split_whitespace()
            .map(|tok| {
                Phoneme::from_str(tok).map_err(|e| match e {
                    PhonemeParseError::Unknown(t) => LexiconError::UnknownPhoneme {
                        line: line_no,
                        token: t,
                    },
                    other => LexiconError::Malformed {
                        line: line_no,
                        reason: other.to_string(),
                    },
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let seq = PhonemeSeq::new(phonemes).ok_or_else(|| LexiconError::Malformed {
            line: line_no,
            reason: "no phonemes".into(),
        })?;
        entries
            .entry(word.clone())
            .or_insert_with(|| LexiconEntry {
                word,
                pronunciations: Vec::new(),
            })
            .pronunciations
            .push(seq);
    }
    Ok(Lexicon { entries })
}

fn split_head(line: &str) -> Option<(&str, &str)> {
    if let Some(pos) = line.find('\t') {
        let (h, r) = line.split_at(pos);
        return Some((h.trim(), r.trim()));
    }
    let pos = line.find("  ")?;
    let (h, r) = line.split_at(pos);
    let r = r.trim();
    (!h.trim().is_empty() && !r.is_empty()).then(|| (h.trim(), r))
}

fn strip_variant(head: &str) -> Option<&str> {
    match head.find('(') {
        None => Some(head),
        Some(open) => {
            let inner = head[open + 1..].strip_suffix(')')?;
            inner.parse::<u32>().ok()?;
            Some(&head[..open])
        }
    }
}
