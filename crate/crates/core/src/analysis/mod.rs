//! Kernel estimation and the perception-statistics toolbox.

pub mod dist;
pub mod kernel;
pub mod stats;
pub mod wer;

use thiserror::Error;

pub use kernel::{
    cosine_similarity, group_kernel_tests, kernel_trials_by_participant, mean_kernel, participant_kernel,
    ChoiceRecord, GroupTest, Kernel, KernelKind, KernelTrial, WindowStat,
};
pub use stats::{
    anova_from_summary, bootstrap_ci, chi_square_gof, one_sample_t, one_way_anova, paired_t, pearson_r,
    pearson_test, tukey_hsd, welch_t, AnovaResult, BootstrapOptions, Df, GroupSummary, StatTestResult,
    TukeyPair,
};
pub use wer::{aggregate_mos, wer_report, MosCell, TargetVowel, WerCounts, WerReport, WerResponse, WordRelation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("degenerate responder")]
    DegenerateResponder,
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("zero variance")]
    ZeroVariance,
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    UnknownStyle(String),
    #[error("no minimal-pair entry for target word {0:?}")]
    MissingPair(String),
    #[error("response refers to unknown trial {0:?}")]
    UnknownTrial(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
