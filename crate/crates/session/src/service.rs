//! Session bookkeeping independent of the transport.
//!
//! Locks: the session table and each experiment's writer are held only
//! long enough to look up or append; each session has its own mutex, so
//! mutations of one session are serialized while other sessions proceed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use prosody_core::analysis::WerResponse;
use prosody_core::rng;
use prosody_core::stimgen::TrialSpec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, QuestionnaireItem};
use crate::{SessionError, SCHEMA_VERSION};

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn check_version(v: u32) -> Result<(), SessionError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(SessionError::BadVersion(v))
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Body of `POST /experiments/{id}/sessions`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default = "default_version")]
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub demographics: BTreeMap<String, serde_json::Value>,
    /// Overrides the per-session shuffle seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub v: u32,
    pub session_id: String,
    pub experiment_id: String,
    pub participant_id: String,
    pub seed: u64,
    /// Index of the next trial in `order`.
    pub cursor: usize,
    pub n_trials: usize,
    pub demographics: BTreeMap<String, serde_json::Value>,
    pub completed: bool,
    /// Served trial ids, in presentation order.
    pub order: Vec<String>,
    #[serde(skip)]
    playbacks: HashMap<String, u32>,
}

/// Payload of `GET /sessions/{id}/next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub v: u32,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_index: Option<usize>,
    pub n_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_url: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questionnaire: Vec<QuestionnaireItem>,
}

/// Body of `POST /sessions/{id}/responses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    #[serde(default = "default_version")]
    pub v: u32,
    pub trial_id: String,
    pub choice: String,
    #[serde(default)]
    pub mos: BTreeMap<String, i64>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

/// One line of the response log. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub v: u32,
    pub session_id: String,
    pub participant_id: String,
    pub experiment_id: String,
    pub trial_id: String,
    pub trial_index: usize,
    pub choice: String,
    pub mos: BTreeMap<String, i64>,
    pub elapsed_ms: u64,
    /// Unix time in milliseconds.
    pub received_at: u64,
    pub attention_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub v: u32,
    pub accepted: bool,
    pub cursor: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SessionEvent {
    Created {
        v: u32,
        session_id: String,
        participant_id: String,
        seed: u64,
        demographics: BTreeMap<String, serde_json::Value>,
        order: Vec<String>,
        at: u64,
    },
    Playback {
        v: u32,
        session_id: String,
        trial_id: String,
        at: u64,
    },
}

struct Logs {
    sessions: File,
    responses: File,
    created: u64,
}

struct Experiment {
    config: ExperimentConfig,
    trials: HashMap<String, TrialSpec>,
    attention: HashSet<String>,
    responses_path: PathBuf,
    logs: Mutex<Logs>,
}

impl Experiment {
    fn append(file: &mut File, line: &impl Serialize) -> Result<(), SessionError> {
        let mut buf = serde_json::to_vec(line).expect("log line serializes");
        buf.push(b'\n');
        // one write on an O_APPEND handle, so lines never interleave
        file.write_all(&buf)?;
        file.flush()?;
        Ok(())
    }

    fn audio_path(&self, trial: &TrialSpec) -> PathBuf {
        let base = self.config.audio_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        match &trial.rendered_audio_path {
            Some(p) => base.join(p),
            None => base.join(format!("{}.wav", trial.trial_id)),
        }
    }
}

/// All experiments served by one process.
pub struct Service {
    experiments: HashMap<String, Arc<Experiment>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SessionError::CorruptLog {
                file: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn open_append(path: &Path) -> Result<File, SessionError> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

impl Service {
    /// Opens (or creates) the logs under `data_dir` and replays them.
    pub fn new(configs: Vec<ExperimentConfig>, data_dir: impl AsRef<Path>) -> Result<Self, SessionError> {
        let data_dir = data_dir.as_ref();
        std::fs::create_dir_all(data_dir)?;
        let mut experiments = HashMap::new();
        let mut sessions = HashMap::new();
        for config in configs {
            config.validate()?;
            let id = config.experiment_id.clone();
            if experiments.contains_key(&id) {
                return Err(SessionError::Config(format!("experiment {id} configured twice")));
            }
            let sessions_path = data_dir.join(format!("{id}.sessions.jsonl"));
            let responses_path = data_dir.join(format!("{id}.responses.jsonl"));
            let trials: HashMap<String, TrialSpec> =
                config.trial_specs.iter().map(|t| (t.trial_id.clone(), t.clone())).collect();
            let attention = config
                .attention_checks
                .iter()
                .map(|&i| config.trial_specs[i].trial_id.clone())
                .collect();

            let mut created = 0;
            for ev in read_jsonl::<SessionEvent>(&sessions_path)? {
                match ev {
                    SessionEvent::Created { session_id, participant_id, seed, demographics, order, .. } => {
                        created += 1;
                        let n_trials = order.len();
                        let state = SessionState {
                            v: SCHEMA_VERSION,
                            session_id: session_id.clone(),
                            experiment_id: id.clone(),
                            participant_id,
                            seed,
                            cursor: 0,
                            n_trials,
                            demographics,
                            completed: n_trials == 0,
                            order,
                            playbacks: HashMap::new(),
                        };
                        sessions.insert(session_id, state);
                    }
                    SessionEvent::Playback { session_id, trial_id, .. } => {
                        if let Some(s) = sessions.get_mut(&session_id) {
                            *s.playbacks.entry(trial_id).or_insert(0) += 1;
                        }
                    }
                }
            }
            for rec in read_jsonl::<ResponseRecord>(&responses_path)? {
                if let Some(s) = sessions.get_mut(&rec.session_id) {
                    s.cursor = (s.cursor + 1).min(s.n_trials);
                    s.completed = s.cursor == s.n_trials;
                }
            }
            log::info!("experiment {id}: {} trials, {created} sessions replayed", config.trial_specs.len());
            let logs = Logs {
                sessions: open_append(&sessions_path)?,
                responses: open_append(&responses_path)?,
                created,
            };
            experiments.insert(
                id,
                Arc::new(Experiment { config, trials, attention, responses_path, logs: Mutex::new(logs) }),
            );
        }
        let sessions = sessions.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect();
        Ok(Service { experiments, sessions: Mutex::new(sessions) })
    }

    pub fn experiment(&self, id: &str) -> Option<&ExperimentConfig> {
        self.experiments.get(id).map(|e| &e.config)
    }

    fn exp(&self, id: &str) -> Result<&Arc<Experiment>, SessionError> {
        self.experiments.get(id).ok_or_else(|| SessionError::UnknownExperiment(id.to_string()))
    }

    fn handle(&self, session_id: &str) -> Result<Arc<Mutex<SessionState>>, SessionError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))
    }

    /// Snapshot of a session.
    pub fn session(&self, session_id: &str) -> Result<SessionState, SessionError> {
        Ok(self.handle(session_id)?.lock().expect("session lock").clone())
    }

    pub fn create_session(&self, experiment_id: &str, req: CreateSession) -> Result<SessionState, SessionError> {
        check_version(req.v)?;
        let exp = self.exp(experiment_id)?;
        let missing = exp.config.demographics_schema.missing(&req.demographics);
        if !missing.is_empty() {
            return Err(SessionError::MissingDemographics(missing));
        }
        let mut id_bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut id_bytes);
        let session_id: String = id_bytes.iter().map(|b| format!("{b:02x}")).collect();
        let participant_id = req.participant_id.clone().unwrap_or_else(|| format!("p-{}", &session_id[..8]));

        let mut logs = exp.logs.lock().expect("log lock");
        let seed = req
            .seed
            .unwrap_or_else(|| rng::substream(exp.config.seed, logs.created).next_u64());
        let mut order: Vec<String> = exp.config.trial_specs.iter().map(|t| t.trial_id.clone()).collect();
        rng::shuffle(&mut order, &mut rng::seeded(seed));
        let state = SessionState {
            v: SCHEMA_VERSION,
            session_id: session_id.clone(),
            experiment_id: experiment_id.to_string(),
            participant_id: participant_id.clone(),
            seed,
            cursor: 0,
            n_trials: order.len(),
            demographics: req.demographics.clone(),
            completed: false,
            order: order.clone(),
            playbacks: HashMap::new(),
        };
        Experiment::append(
            &mut logs.sessions,
            &SessionEvent::Created {
                v: SCHEMA_VERSION,
                session_id: session_id.clone(),
                participant_id,
                seed,
                demographics: req.demographics,
                order,
                at: now_ms(),
            },
        )?;
        logs.created += 1;
        drop(logs);
        self.sessions
            .lock()
            .expect("session table lock")
            .insert(session_id, Arc::new(Mutex::new(state.clone())));
        Ok(state)
    }

    /// The pending trial; does not advance the cursor.
    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial, SessionError> {
        let handle = self.handle(session_id)?;
        let s = handle.lock().expect("session lock");
        let exp = self.exp(&s.experiment_id)?;
        if s.completed {
            return Ok(NextTrial {
                v: SCHEMA_VERSION,
                done: true,
                trial_index: None,
                n_trials: s.n_trials,
                trial: None,
                audio_url: None,
                questionnaire: Vec::new(),
            });
        }
        let trial = exp.trials[&s.order[s.cursor]].clone();
        Ok(NextTrial {
            v: SCHEMA_VERSION,
            done: false,
            trial_index: Some(s.cursor),
            n_trials: s.n_trials,
            audio_url: Some(format!("/audio/{}?session={}", trial.trial_id, s.session_id)),
            trial: Some(trial),
            questionnaire: exp.config.questionnaire.clone(),
        })
    }

    pub fn submit_response(&self, session_id: &str, sub: ResponseSubmission) -> Result<Ack, SessionError> {
        check_version(sub.v)?;
        let handle = self.handle(session_id)?;
        let mut s = handle.lock().expect("session lock");
        let exp = self.exp(&s.experiment_id)?;
        if s.completed {
            return Err(SessionError::Conflict("session already completed".into()));
        }
        let pending = &s.order[s.cursor];
        if sub.trial_id != *pending {
            let answered = s.order[..s.cursor].contains(&sub.trial_id);
            return Err(SessionError::Conflict(if answered {
                format!("trial {} already answered; submissions are accepted once", sub.trial_id)
            } else {
                format!("stale trial {}; pending trial is {pending}", sub.trial_id)
            }));
        }
        let trial = &exp.trials[pending];
        if !trial.offers(&sub.choice) {
            return Err(SessionError::InvalidResponse(format!(
                "choice {:?} is not one of {:?} / {:?}",
                sub.choice, trial.option_order.0, trial.option_order.1
            )));
        }
        for item in &exp.config.questionnaire {
            match sub.mos.get(&item.item_id) {
                None if item.required => {
                    return Err(SessionError::InvalidResponse(format!("missing rating for {}", item.item_id)))
                }
                Some(&v) if v < 1 || v > item.scale_points as i64 => {
                    return Err(SessionError::InvalidResponse(format!(
                        "rating {v} for {} outside 1..={}",
                        item.item_id, item.scale_points
                    )))
                }
                _ => {}
            }
        }
        if let Some(k) = sub.mos.keys().find(|k| !exp.config.questionnaire.iter().any(|q| &q.item_id == *k)) {
            return Err(SessionError::InvalidResponse(format!("unknown questionnaire item {k}")));
        }
        let record = ResponseRecord {
            v: SCHEMA_VERSION,
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            experiment_id: s.experiment_id.clone(),
            trial_id: sub.trial_id,
            trial_index: s.cursor,
            choice: sub.choice,
            mos: sub.mos,
            elapsed_ms: sub.elapsed_ms,
            received_at: now_ms(),
            attention_check: exp.attention.contains(pending),
        };
        Experiment::append(&mut exp.logs.lock().expect("log lock").responses, &record)?;
        s.cursor += 1;
        s.completed = s.cursor == s.n_trials;
        Ok(Ack { v: SCHEMA_VERSION, accepted: true, cursor: s.cursor, completed: s.completed })
    }

    /// WAV bytes for a trial of the session, counted against the playback
    /// limit.
    pub fn fetch_audio(&self, session_id: &str, stimulus_id: &str) -> Result<Vec<u8>, SessionError> {
        let handle = self.handle(session_id)?;
        let mut s = handle.lock().expect("session lock");
        let exp = self.exp(&s.experiment_id)?;
        let trial = exp
            .trials
            .get(stimulus_id)
            .ok_or_else(|| SessionError::UnknownStimulus(stimulus_id.to_string()))?;
        let used = s.playbacks.get(stimulus_id).copied().unwrap_or(0);
        if used >= exp.config.playback_limit {
            return Err(SessionError::PlaybackLimit(exp.config.playback_limit));
        }
        let path = exp.audio_path(trial);
        let bytes = std::fs::read(&path).map_err(|e| {
            log::warn!("{}: {e}", path.display());
            SessionError::AudioMissing(stimulus_id.to_string())
        })?;
        Experiment::append(
            &mut exp.logs.lock().expect("log lock").sessions,
            &SessionEvent::Playback {
                v: SCHEMA_VERSION,
                session_id: s.session_id.clone(),
                trial_id: stimulus_id.to_string(),
                at: now_ms(),
            },
        )?;
        *s.playbacks.entry(stimulus_id.to_string()).or_insert(0) += 1;
        Ok(bytes)
    }

    /// The response log as written, one [`ResponseRecord`] per line.
    pub fn export(&self, experiment_id: &str) -> Result<String, SessionError> {
        let exp = self.exp(experiment_id)?;
        // hold the writer so the snapshot ends on a line boundary
        let _logs = exp.logs.lock().expect("log lock");
        match std::fs::read_to_string(&exp.responses_path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }
}

/// Joins exported responses with the config's scoring metadata. Trials
/// without a [`crate::WerTarget`] are skipped.
pub fn wer_responses_from_export(export: &str, config: &ExperimentConfig) -> Result<Vec<WerResponse>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in export.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ResponseRecord = serde_json::from_str(line).map_err(|e| SessionError::CorruptLog {
            file: "export".into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(t) = config.wer_targets.get(&rec.trial_id) {
            out.push(WerResponse {
                style: t.style.clone(),
                target_word: t.target_word.clone(),
                chosen_word: rec.choice,
                vowel_class: t.vowel_class,
            });
        }
    }
    Ok(out)
}
