//! Experiment sessions for one-interval 2AFC listening tests.
//!
//! Each experiment keeps two append-only JSON-lines files in the data
//! directory: `{experiment_id}.sessions.jsonl` (session creation and audio
//! playback events) and `{experiment_id}.responses.jsonl` (one
//! [`ResponseRecord`] per accepted answer). State is rebuilt from both files
//! on startup, so a restarted server resumes every session where it stopped.

pub mod config;
pub mod http;
pub mod service;

use thiserror::Error;

pub use config::{DemographicsSchema, ExperimentConfig, QuestionnaireItem, WerTarget};
pub use http::router;
pub use service::{
    wer_responses_from_export, Ack, CreateSession, NextTrial, ResponseRecord, ResponseSubmission, Service,
    SessionState,
};

/// Version tag carried by every payload and log line.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown stimulus {0:?}")]
    UnknownStimulus(String),
    #[error("missing required demographics: {}", .0.join(", "))]
    MissingDemographics(Vec<String>),
    #[error("unsupported payload version {0}")]
    BadVersion(u32),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("{0}")]
    Conflict(String),
    #[error("playback limit of {0} reached")]
    PlaybackLimit(u32),
    #[error("audio not found for {0:?}")]
    AudioMissing(String),
    #[error("corrupt log {file} line {line}: {reason}")]
    CorruptLog { file: String, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
