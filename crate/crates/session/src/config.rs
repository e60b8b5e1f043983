//! Experiment definitions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prosody_core::analysis::TargetVowel;
use prosody_core::stimgen::{read_manifest, TrialSpec};
use serde::{Deserialize, Serialize};

use crate::{SessionError, SCHEMA_VERSION};

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_scale() -> u32 {
    10
}

fn default_true() -> bool {
    true
}

fn default_playback_limit() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireItem {
    pub item_id: String,
    pub prompt: String,
    #[serde(default = "default_scale")]
    pub scale_points: u32,
    #[serde(default = "default_true")]
    pub required: bool,
    /// Translated prompts keyed by locale tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub locales: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsSchema {
    pub required: Vec<String>,
}

impl Default for DemographicsSchema {
    fn default() -> Self {
        DemographicsSchema {
            required: ["native_language", "age", "gender", "english_proficiency"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl DemographicsSchema {
    /// Required fields that are absent, null or empty strings.
    pub fn missing(&self, answers: &BTreeMap<String, serde_json::Value>) -> Vec<String> {
        self.required
            .iter()
            .filter(|f| match answers.get(*f) {
                None | Some(serde_json::Value::Null) => true,
                Some(serde_json::Value::String(s)) => s.trim().is_empty(),
                _ => false,
            })
            .cloned()
            .collect()
    }
}

/// What a trial asks the listener to identify, for word-error scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerTarget {
    pub style: String,
    pub target_word: String,
    pub vowel_class: TargetVowel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub v: u32,
    pub experiment_id: String,
    #[serde(default)]
    pub trial_specs: Vec<TrialSpec>,
    /// JSON-lines manifest appended to `trial_specs`; relative to the
    /// config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub questionnaire: Vec<QuestionnaireItem>,
    /// Indices into the configured trial list.
    #[serde(default)]
    pub attention_checks: Vec<usize>,
    #[serde(default = "default_playback_limit")]
    pub playback_limit: u32,
    #[serde(default)]
    pub demographics_schema: DemographicsSchema,
    /// Base directory for `rendered_audio_path`; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Optional scoring metadata keyed by trial_id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub wer_targets: BTreeMap<String, WerTarget>,
}

impl ExperimentConfig {
    /// Reads a config file and resolves its manifest and audio directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = cfg.manifest.take() {
            let m = base.join(m);
            let text = std::fs::read_to_string(&m)?;
            let specs = read_manifest(&text).map_err(|e| SessionError::Config(format!("{}: {e}", m.display())))?;
            cfg.trial_specs.extend(specs);
            cfg.manifest = Some(m);
        }
        cfg.audio_dir = Some(base.join(cfg.audio_dir.take().unwrap_or_default()));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Config(m));
        if self.v != SCHEMA_VERSION {
            return bad(format!("unsupported config version {}", self.v));
        }
        if self.experiment_id.is_empty() || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("experiment_id {:?} must be nonempty [A-Za-z0-9._-]", self.experiment_id));
        }
        if self.trial_specs.is_empty() {
            return bad("experiment has no trials".into());
        }
        if self.playback_limit < 1 {
            return bad("playback_limit must be >= 1".into());
        }
        if let Some(&i) = self.attention_checks.iter().find(|&&i| i >= self.trial_specs.len()) {
            return bad(format!("attention check index {i} is out of range"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.trial_specs {
            if !ids.insert(t.trial_id.as_str()) {
                return bad(format!("duplicate trial_id {}", t.trial_id));
            }
        }
        if let Some(id) = self.wer_targets.keys().find(|id| !ids.contains(id.as_str())) {
            return bad(format!("wer target for unknown trial {id}"));
        }
        for q in &self.questionnaire {
            if q.scale_points < 2 {
                return bad(format!("item {} needs at least 2 scale points", q.item_id));
            }
        }
        Ok(())
    }
}
