//! The `prosody` command line.
//!
//! Exit codes: 0 on success, 1 when a domain operation fails, 2 for usage
//! errors. Machine-readable output goes to stdout or to files; diagnostics
//! go to stderr.

mod audio;
mod search;
mod stats;
mod text;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error that should exit with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "prosody", version, about = "Prosody perception toolkit: clarity planning, stimulus randomization, DSP, features, statistics and experiment serving")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Base directory for relative output paths.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pronunciation dictionary checks.
    #[command(subcommand)]
    Lexicon(LexiconCmd),
    /// Duration plans for clarity, emphasis and validation stimuli.
    #[command(subcommand)]
    Clarity(ClarityCmd),
    /// Randomized pitch/stretch trial batches.
    #[command(subcommand)]
    Stimgen(StimgenCmd),
    /// Pitch shifting, time stretching, f0 tracking and word insertion.
    #[command(subcommand)]
    Dsp(DspCmd),
    /// Voice feature extraction and clustering.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Kernels and statistical tests.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Word error rates and opinion scores.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Formant grid search for an ambiguous vowel.
    #[command(subcommand)]
    Ambiguity(AmbiguityCmd),
    /// Serve experiments over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DictArg {
    /// Dictionary file; defaults to the bundled lexicon.
    #[arg(long, value_name = "FILE")]
    pub dict: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LexiconCmd {
    /// Parse a dictionary and report words missing from it.
    Check {
        #[command(flatten)]
        dict: DictArg,
        /// Words that must be present.
        words: Vec<String>,
    },
    /// Pronunciation, vowel profile and clarity decision per word (JSON lines).
    Show {
        #[command(flatten)]
        dict: DictArg,
        #[arg(required = true)]
        words: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Markup,
    Auto,
}

#[derive(Debug, Args)]
pub struct ClarityOpts {
    #[command(flatten)]
    pub dict: DictArg,
    /// Duration multiplier for stretched tense vowels.
    #[arg(long, default_value_t = 1.6)]
    pub stretch_factor: f64,
    /// Uniform speech-rate multiplier.
    #[arg(long, default_value_t = 0.75)]
    pub base_rate: f64,
    /// Phonemes ramped on each side of a stretched word.
    #[arg(long, default_value_t = 6)]
    pub ramp_len: usize,
    /// Function-word list for auto mode (one word per line).
    #[arg(long, value_name = "FILE")]
    pub function_words: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum ClarityCmd {
    /// Duration plan (`phoneme,multiplier,span_kind`) for marked-up text.
    Plan {
        /// Text with `!word!` clarity markup.
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value = "on")]
        clarity: OnOff,
        #[arg(long, value_enum, default_value = "markup")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: PlanFormat,
        #[command(flatten)]
        opts: ClarityOpts,
    },
    /// The eleven-step word/context validation grid.
    Grid,
    /// Plans for the base, stretch, emphasis and clarity styles.
    Styles {
        #[arg(long)]
        text: String,
        #[command(flatten)]
        opts: ClarityOpts,
    },
    /// Evaluate the duration equation on explicit arrays.
    Durations {
        /// Log durations, comma separated.
        #[arg(long, value_name = "LIST")]
        log_w: String,
        /// 0/1 mask; defaults to all ones.
        #[arg(long, value_name = "LIST")]
        mask: Option<String>,
        /// Speech-rate multipliers; defaults to all ones.
        #[arg(long, value_name = "LIST")]
        speechrate: Option<String>,
        /// Clarity multipliers; defaults to all ones.
        #[arg(long, value_name = "LIST")]
        c_array: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StimKind {
    Word,
    Phrase,
}

#[derive(Debug, Subcommand)]
pub enum StimgenCmd {
    /// Generate a trial manifest (JSON lines).
    Batch {
        /// Base stimuli, one JSON object per line.
        #[arg(long, value_name = "FILE")]
        stimuli: PathBuf,
        #[arg(long)]
        n_trials: usize,
        /// Sets the default window count (4 for words, 13 for phrases).
        #[arg(long, value_enum, default_value = "word")]
        kind: StimKind,
        #[arg(long)]
        n_windows: Option<usize>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long)]
        pitch_sigma_cents: Option<f64>,
        #[arg(long)]
        stretch_sigma_log2: Option<f64>,
        #[arg(long)]
        clip_sigmas: Option<f64>,
        /// Draw stretch ratios linearly instead of in log2.
        #[arg(long)]
        linear_stretch: bool,
        /// Manifest path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Write `{trial_id}.pitch.csv` and `{trial_id}.stretch.csv` per trial.
    ExportProfiles {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
    /// Render every trial of a manifest from its base stimulus audio.
    Render {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        stimuli: PathBuf,
        /// Where rendered WAVs go.
        #[arg(long, value_name = "DIR")]
        audio_dir: PathBuf,
        /// Updated manifest with `rendered_audio_path`.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct WavOut {
    /// Write 32-bit float samples instead of 16-bit PCM.
    #[arg(long)]
    pub float: bool,
}

#[derive(Debug, Subcommand)]
pub enum DspCmd {
    /// Apply pitch and/or stretch profiles.
    Apply {
        #[arg(long, value_name = "FILE")]
        pitch_profile: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        stretch_profile: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        wav: WavOut,
    },
    /// Flatten voiced pitch to a constant frequency.
    Flatten {
        #[arg(long, default_value_t = 120.0)]
        hz: f64,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        wav: WavOut,
    },
    /// f0 track as `time_s,f0_hz` (empty when unvoiced).
    F0 { input: PathBuf },
    /// Append a word after the phrase's speech end at a zero crossing.
    Insert {
        #[arg(long, value_name = "FILE")]
        phrase: PathBuf,
        #[arg(long, value_name = "FILE")]
        word: PathBuf,
        /// Silence between speech end and the word.
        #[arg(long, default_value_t = 0.0)]
        gap_ms: f64,
        output: PathBuf,
        #[command(flatten)]
        wav: WavOut,
    },
}

/// Inclusive k range, `N` or `A..B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange(pub usize, pub usize);

impl std::str::FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let k = parse(s)?;
                (k, k)
            }
        };
        if a < 2 || b < a {
            return Err(format!("k range {s:?} must satisfy 2 <= start <= end"));
        }
        Ok(KRange(a, b))
    }
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCmd {
    /// Extract the ten voice features from every WAV under a directory.
    Extract {
        dir: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Robust-scale and cluster a features CSV.
    Cluster {
        features: PathBuf,
        /// `N` fits one model; `A..B` sweeps.
        #[arg(long, default_value = "2..10")]
        k: KRange,
        /// Print the sweep report (k, inertia, silhouette).
        #[arg(long)]
        report: bool,
        /// Model JSON for the best (or only) k.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupTestArg {
    /// Paired t of A- vs B-conditioned means per participant.
    Paired,
    /// One-sample t of normalized kernels against zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Statistic {
    Mean,
    Median,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Participant and group kernels from a manifest and responses.
    Kernels {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Response log (JSON lines with trial_id, choice and a participant or session id).
        #[arg(long, value_name = "FILE")]
        responses: PathBuf,
        /// Word counted as response A; defaults to the alphabetically first word of the first trial.
        #[arg(long)]
        word_a: Option<String>,
        #[arg(long, value_enum, default_value = "paired")]
        test: GroupTestArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        /// Also write the full kernels as JSON.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// One-way ANOVA from raw `group,value` rows or from summaries.
    Anova {
        /// CSV with header `group,value`.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["n", "means", "sds"])]
        groups: Option<PathBuf>,
        /// Group sizes, comma separated.
        #[arg(long, value_name = "LIST", requires_all = ["means", "sds"])]
        n: Option<String>,
        #[arg(long, value_name = "LIST")]
        means: Option<String>,
        #[arg(long, value_name = "LIST")]
        sds: Option<String>,
    },
    /// χ² goodness of fit.
    Chi2 {
        #[arg(long, value_name = "LIST")]
        counts: String,
        /// Expected counts or proportions; uniform when absent.
        #[arg(long, value_name = "LIST")]
        expected: Option<String>,
    },
    /// Tukey HSD on `group,value` rows.
    Tukey {
        #[arg(long, value_name = "FILE")]
        groups: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Percentile bootstrap interval.
    Bootstrap {
        /// Numbers separated by commas or whitespace.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mean")]
        statistic: Statistic,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
    /// Pearson correlation of two columns.
    Pearson {
        /// CSV with a header and two numeric columns.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Word error rate with tense/lax substitution breakdown.
    Wer {
        /// Identification responses (style, target_word, chosen_word, vowel_class).
        #[arg(long, value_name = "FILE", required_unless_present = "export", conflicts_with = "export")]
        responses: Option<PathBuf>,
        /// Session export; requires --config for the trial targets.
        #[arg(long, value_name = "FILE", requires = "config")]
        export: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Minimal pairs (two words per line).
        #[arg(long, value_name = "FILE")]
        pairs: Option<PathBuf>,
        /// Homophones (two words per line).
        #[arg(long, value_name = "FILE")]
        homophones: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
    },
    /// Mean opinion scores per style and questionnaire item.
    Mos {
        #[arg(long, value_name = "FILE")]
        export: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AmbiguityCmd {
    /// Exhaustive F1/F2 search in both directions.
    Search {
        /// Recording of word A.
        #[arg(long, value_name = "FILE")]
        clip_a: PathBuf,
        /// Formants of word A as `f1,f2`.
        #[arg(long)]
        origin: prosody_core::ambiguity::FormantPoint,
        /// Recording of word B.
        #[arg(long, value_name = "FILE")]
        clip_b: PathBuf,
        #[arg(long)]
        target: prosody_core::ambiguity::FormantPoint,
        /// The two words as `a,b`.
        #[arg(long)]
        words: String,
        #[arg(long, default_value_t = 10.0)]
        step_hz: f64,
        /// Scorer speaking the SCORE/OK line protocol.
        #[arg(long, value_name = "CMD", required_unless_present = "mock_oracle")]
        oracle_cmd: Option<String>,
        /// Use the analytic mock scorer instead of a process.
        #[arg(long, conflicts_with = "oracle_cmd")]
        mock_oracle: bool,
        /// Formant shifter, run as `CMD in.wav out.wav f1 f2 f1' f2'`; without it clips are only tagged.
        #[arg(long, value_name = "CMD")]
        shifter_cmd: Option<String>,
        /// Per-request oracle timeout.
        #[arg(long, default_value_t = 30.0)]
        timeout_s: f64,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Every scored point as CSV.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Experiment config (repeatable).
    #[arg(long, value_name = "FILE", required = true)]
    pub config: Vec<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Log directory; defaults to --out-dir, then the current directory.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
}

/// Shared state for one invocation.
pub struct Ctx {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Ctx {
    /// Resolves an output path against `--out-dir`.
    pub fn out(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Writes a file, creating parent directories.
    pub fn write(&self, p: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let p = self.out(p);
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, contents).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
        Ok(p)
    }
}

pub fn read_text(p: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))
}

pub fn print(s: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(s.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

/// Comma/whitespace separated numbers.
pub fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| usage(format!("not a number: {t:?}"))))
        .collect()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx { seed: cli.seed, out_dir: cli.out_dir };
    match cli.command {
        Command::Lexicon(c) => text::lexicon(&ctx, c),
        Command::Clarity(c) => text::clarity(&ctx, c),
        Command::Stimgen(c) => audio::stimgen(&ctx, c),
        Command::Dsp(c) => audio::dsp(&ctx, c),
        Command::Features(c) => audio::features(&ctx, c),
        Command::Analyze(c) => stats::analyze(&ctx, c),
        Command::Eval(c) => stats::eval(&ctx, c),
        Command::Ambiguity(c) => search::ambiguity(&ctx, c),
        Command::Serve(a) => search::serve(&ctx, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).try_init().ok();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
