//! F1/F2 grid search for the most ambiguous vowel between two words.
//!
//! Formant re-synthesis and word scoring are both injected. The search
//! walks every lattice point of the box between the two vowels twice, once
//! shifting the recording of word A and once shifting the recording of
//! word B, and keeps the point with the smallest |log p(a) - log p(b)|.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, AudioBuffer, WavFormat};

#[derive(Debug, Error)]
pub enum AmbiguityError {
    #[error("invalid formant point: F1 {f1} Hz, F2 {f2} Hz (need 0 < F1 < F2)")]
    InvalidPoint { f1: f64, f2: f64 },
    #[error("search box crosses F1 = F2")]
    BoxCrossesDiagonal,
    #[error("step must be finite and > 0, got {0}")]
    BadStep(f64),
    #[error("every grid point failed; first failure: {0}")]
    AllFailed(String),
    #[error("oracle timed out after {0:?}")]
    Timeout(Duration),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("shifter error: {0}")]
    Shifter(String),
    #[error("audio: {0}")]
    Audio(#[from] dsp::DspError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormantPoint {
    pub f1_hz: f64,
    pub f2_hz: f64,
}

impl FormantPoint {
    pub fn new(f1_hz: f64, f2_hz: f64) -> Result<Self, AmbiguityError> {
        if !(f1_hz > 0.0 && f1_hz < f2_hz && f2_hz.is_finite()) {
            return Err(AmbiguityError::InvalidPoint { f1: f1_hz, f2: f2_hz });
        }
        Ok(FormantPoint { f1_hz, f2_hz })
    }
}

impl std::str::FromStr for FormantPoint {
    type Err = String;

    /// `f1,f2` in Hz.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected F1,F2 but got {s:?}"))?;
        let f1: f64 = a.trim().parse().map_err(|e| format!("F1: {e}"))?;
        let f2: f64 = b.trim().parse().map_err(|e| format!("F2: {e}"))?;
        FormantPoint::new(f1, f2).map_err(|e| e.to_string())
    }
}

/// Values from `from` toward `to` in `step` increments, ending exactly on
/// `to`: ⌈|Δ|/step + 1⌉ values.
fn axis(from: f64, to: f64, step: f64) -> Vec<f64> {
    let span = (to - from).abs();
    let dir = if to >= from { 1.0 } else { -1.0 };
    let mut out = Vec::new();
    let mut i = 0usize;
    while (i as f64) * step < span - 1e-9 {
        out.push(from + dir * i as f64 * step);
        i += 1;
    }
    out.push(to);
    out
}

/// Lattice over the box between `origin` and `target`, row-major with F1
/// as the outer axis, starting at the origin.
pub fn grid_points(origin: FormantPoint, target: FormantPoint, step_hz: f64) -> Result<Vec<FormantPoint>, AmbiguityError> {
    if !(step_hz > 0.0 && step_hz.is_finite()) {
        return Err(AmbiguityError::BadStep(step_hz));
    }
    if origin.f1_hz.max(target.f1_hz) >= origin.f2_hz.min(target.f2_hz) {
        return Err(AmbiguityError::BoxCrossesDiagonal);
    }
    let f1s = axis(origin.f1_hz, target.f1_hz, step_hz);
    let f2s = axis(origin.f2_hz, target.f2_hz, step_hz);
    Ok(f1s
        .iter()
        .flat_map(|&f1| f2s.iter().map(move |&f2| FormantPoint { f1_hz: f1, f2_hz: f2 }))
        .collect())
}

/// Audio plus the formant point it is known to realize, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub audio: AudioBuffer,
    pub formants: Option<FormantPoint>,
}

pub trait FormantShifter: Sync {
    fn shift(&self, clip: &Clip, from: FormantPoint, to: FormantPoint) -> Result<Clip, AmbiguityError>;
}

pub trait WordProbOracle: Sync {
    fn score(&self, clip: &Clip, word_a: &str, word_b: &str) -> Result<(f64, f64), AmbiguityError>;
}

/// Leaves samples untouched, tags the clip with the requested target and
/// records every request.
#[derive(Debug, Default)]
pub struct StubShifter {
    requests: Mutex<Vec<(FormantPoint, FormantPoint)>>,
}

impl StubShifter {
    pub fn requests(&self) -> Vec<(FormantPoint, FormantPoint)> {
        self.requests.lock().unwrap().clone()
    }
}

impl FormantShifter for StubShifter {
    fn shift(&self, clip: &Clip, from: FormantPoint, to: FormantPoint) -> Result<Clip, AmbiguityError> {
        self.requests.lock().unwrap().push((from, to));
        Ok(Clip {
            audio: clip.audio.clone(),
            formants: Some(to),
        })
    }
}

/// log p(a) - log p(b) = slope · (F1 - f1_zero), split evenly around -5.
#[derive(Debug, Clone, Copy)]
pub struct LinearMockOracle {
    pub f1_zero: f64,
    pub slope: f64,
}

impl Default for LinearMockOracle {
    fn default() -> Self {
        LinearMockOracle {
            f1_zero: 400.0,
            slope: 1.0,
        }
    }
}

impl WordProbOracle for LinearMockOracle {
    fn score(&self, clip: &Clip, _a: &str, _b: &str) -> Result<(f64, f64), AmbiguityError> {
        let p = clip
            .formants
            .ok_or_else(|| AmbiguityError::Oracle("clip carries no formant tag".into()))?;
        let half = 0.5 * self.slope * (p.f1_hz - self.f1_zero);
        Ok((-5.0 + half, -5.0 - half))
    }
}

/// Oracle backed by a closure over the clip.
pub struct FnOracle<F>(pub F);

impl<F> WordProbOracle for FnOracle<F>
where
    F: Fn(&Clip) -> Result<(f64, f64), AmbiguityError> + Sync,
{
    fn score(&self, clip: &Clip, _a: &str, _b: &str) -> Result<(f64, f64), AmbiguityError> {
        (self.0)(clip)
    }
}

struct ProcessState {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// External scorer speaking a line protocol over stdio.
///
/// Request: `SCORE <wav-path> <word_a> <word_b>`. Response:
/// `OK <logp_a> <logp_b>` or `ERR <message>`. Each clip is written to a
/// scratch WAV file before the request. Requests are serialized.
pub struct ProcessOracle {
    state: Mutex<ProcessState>,
    timeout: Duration,
    scratch: PathBuf,
    counter: std::sync::atomic::AtomicUsize,
}

impl ProcessOracle {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration, scratch: PathBuf) -> Result<Self, AmbiguityError> {
        std::fs::create_dir_all(&scratch)?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessOracle {
            state: Mutex::new(ProcessState {
                child,
                stdin,
                lines: rx,
            }),
            timeout,
            scratch,
            counter: Default::default(),
        })
    }

    fn request(&self, path: &std::path::Path, a: &str, b: &str) -> Result<(f64, f64), AmbiguityError> {
        for w in [a, b] {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(AmbiguityError::Protocol(format!("word {w:?} cannot be sent")));
            }
        }
        let path_str = path.to_string_lossy();
        if path_str.chars().any(char::is_whitespace) {
            return Err(AmbiguityError::Protocol(format!("path {path_str:?} contains whitespace")));
        }
        let mut st = self.state.lock().unwrap();
        writeln!(st.stdin, "SCORE {path_str} {a} {b}")?;
        st.stdin.flush()?;
        let line = match st.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(e.into()),
            Err(RecvTimeoutError::Timeout) => return Err(AmbiguityError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(AmbiguityError::Protocol("oracle closed its output".into()))
            }
        };
        parse_response(&line)
    }
}

pub fn parse_response(line: &str) -> Result<(f64, f64), AmbiguityError> {
    let line = line.trim_end();
    if let Some(msg) = line.strip_prefix("ERR") {
        return Err(AmbiguityError::Oracle(msg.trim().to_string()));
    }
    let mut parts = line.split_whitespace();
    if parts.next() != Some("OK") {
        return Err(AmbiguityError::Protocol(format!("unexpected reply {line:?}")));
    }
    let nums: Vec<&str> = parts.collect();
    if nums.len() != 2 {
        return Err(AmbiguityError::Protocol(format!("expected two numbers in {line:?}")));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| AmbiguityError::Protocol(format!("bad number {s:?}")))
    };
    Ok((parse(nums[0])?, parse(nums[1])?))
}

impl WordProbOracle for ProcessOracle {
    fn score(&self, clip: &Clip, word_a: &str, word_b: &str) -> Result<(f64, f64), AmbiguityError> {
        let n = self.counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.scratch.join(format!("clip-{n:06}.wav"));
        dsp::write_wav(&clip.audio, &path, WavFormat::Float32)?;
        let r = self.request(&path, word_a, word_b);
        let _ = std::fs::remove_file(&path);
        r
    }
}

impl Drop for ProcessOracle {
    fn drop(&mut self) {
        if let Ok(st) = self.state.get_mut() {
            let _ = st.child.kill();
            let _ = st.child.wait();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    FromA,
    FromB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub point: FormantPoint,
    pub direction: Direction,
    pub logp_a: f64,
    pub logp_b: f64,
}

impl TraceEntry {
    pub fn delta(&self) -> f64 {
        (self.logp_a - self.logp_b).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPoint {
    pub point: FormantPoint,
    pub direction: Direction,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySearchResult {
    pub best: FormantPoint,
    pub delta_logprob: f64,
    pub direction: Direction,
    pub trace: Vec<TraceEntry>,
    pub failures: Vec<FailedPoint>,
}

#[derive(Debug, Clone)]
pub struct SearchSpec<'a> {
    /// Recording of word A and its measured formants.
    pub clip_a: &'a AudioBuffer,
    pub origin: FormantPoint,
    /// Recording of word B and its measured formants.
    pub clip_b: &'a AudioBuffer,
    pub target: FormantPoint,
    pub words: (&'a str, &'a str),
    pub step_hz: f64,
    /// Concurrent oracle calls; results are reduced in scan order.
    pub parallelism: usize,
}

type Job = (FormantPoint, Direction);
type JobResult = Result<(f64, f64), AmbiguityError>;

fn evaluate(
    job: &Job,
    spec: &SearchSpec<'_>,
    shifter: &dyn FormantShifter,
    oracle: &dyn WordProbOracle,
) -> JobResult {
    let (audio, from) = match job.1 {
        Direction::FromA => (spec.clip_a, spec.origin),
        Direction::FromB => (spec.clip_b, spec.target),
    };
    let src = Clip {
        audio: audio.clone(),
        formants: Some(from),
    };
    let shifted = shifter.shift(&src, from, job.0)?;
    let (a, b) = oracle.score(&shifted, spec.words.0, spec.words.1)?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(AmbiguityError::Oracle(format!("non-finite scores ({a}, {b})")));
    }
    Ok((a, b))
}

/// Exhaustive search in both directions. Failed points are skipped and
/// listed; ties go to the earliest point in scan order (all FromA points
/// precede FromB points).
pub fn search_ambiguous(
    spec: &SearchSpec<'_>,
    shifter: &dyn FormantShifter,
    oracle: &dyn WordProbOracle,
) -> Result<AmbiguitySearchResult, AmbiguityError> {
    let mut jobs: Vec<Job> = grid_points(spec.origin, spec.target, spec.step_hz)?
        .into_iter()
        .map(|p| (p, Direction::FromA))
        .collect();
    jobs.extend(
        grid_points(spec.target, spec.origin, spec.step_hz)?
            .into_iter()
            .map(|p| (p, Direction::FromB)),
    );

    let workers = spec.parallelism.clamp(1, jobs.len());
    let results: Vec<JobResult> = if workers == 1 {
        jobs.iter().map(|j| evaluate(j, spec, shifter, oracle)).collect()
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|j| evaluate(j, spec, shifter, oracle)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        })
    };

    let mut trace = Vec::new();
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok((a, b)) => trace.push(TraceEntry {
                point: job.0,
                direction: job.1,
                logp_a: a,
                logp_b: b,
            }),
            Err(e) => failures.push(FailedPoint {
                point: job.0,
                direction: job.1,
                error: e.to_string(),
            }),
        }
    }
    let Some(best) = trace
        .iter()
        .fold(None::<&TraceEntry>, |acc, e| match acc {
            Some(b) if b.delta() <= e.delta() => Some(b),
            _ => Some(e),
        })
        .cloned()
    else {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(AmbiguityError::AllFailed(first));
    };
    Ok(AmbiguitySearchResult {
        best: best.point,
        delta_logprob: best.delta(),
        direction: best.direction,
        trace,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(f1: f64, f2: f64) -> FormantPoint {
        FormantPoint::new(f1, f2).unwrap()
    }

    fn tone() -> AudioBuffer {
        AudioBuffer::sine(200.0, 0.3, 0.05, 16000)
    }

    fn spec<'a>(a: &'a AudioBuffer, o: FormantPoint, t: FormantPoint) -> SearchSpec<'a> {
        SearchSpec {
            clip_a: a,
            origin: o,
            clip_b: a,
            target: t,
            words: ("peel", "pill"),
            step_hz: 10.0,
            parallelism: 1,
        }
    }

    #[test]
    fn grid_counts() {
        assert_eq!(grid_points(pt(300.0, 2000.0), pt(300.0, 2000.0), 10.0).unwrap().len(), 1);
        let g = grid_points(pt(100.0, 1000.0), pt(120.0, 1020.0), 10.0).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], pt(100.0, 1000.0));
        assert_eq!(g[1], pt(100.0, 1010.0));
        assert_eq!(g[8], pt(120.0, 1020.0));
        let (o, t) = (pt(305.89, 2440.77), pt(476.85, 1565.45));
        let g = grid_points(o, t, 10.0).unwrap();
        let n1 = ((476.85f64 - 305.89).abs() / 10.0 + 1.0).ceil() as usize;
        let n2 = ((1565.45f64 - 2440.77).abs() / 10.0 + 1.0).ceil() as usize;
        assert_eq!(g.len(), n1 * n2);
        assert_eq!(*g.last().unwrap(), t);
        assert!(matches!(grid_points(o, t, 0.0), Err(AmbiguityError::BadStep(_))));
    }

    #[test]
    fn invalid_points() {
        assert!(FormantPoint::new(900.0, 800.0).is_err());
        assert!("300,2000".parse::<FormantPoint>().is_ok());
        assert!("300;2000".parse::<FormantPoint>().is_err());
    }

    #[test]
    fn linear_mock_finds_zero() {
        let a = tone();
        let s = spec(&a, pt(305.89, 2440.77), pt(476.85, 1565.45));
        let shifter = StubShifter::default();
        let r = search_ambiguous(&s, &shifter, &LinearMockOracle::default()).unwrap();
        assert!((r.best.f1_hz - 400.0).abs() <= 5.0, "{:?}", r.best);
        assert!(r.trace.iter().all(|e| r.delta_logprob <= e.delta()));
        assert_eq!(shifter.requests().len(), r.trace.len());
        // reversed search lands on the same F1 row
        let rev = spec(&a, pt(476.85, 1565.45), pt(305.89, 2440.77));
        let r2 = search_ambiguous(&rev, &StubShifter::default(), &LinearMockOracle::default()).unwrap();
        assert!((r2.best.f1_hz - r.best.f1_hz).abs() < 1e-9);
    }

    #[test]
    fn constant_oracle_prefers_first_point() {
        let a = tone();
        let s = spec(&a, pt(300.0, 2000.0), pt(330.0, 1950.0));
        let r = search_ambiguous(&s, &StubShifter::default(), &FnOracle(|_: &Clip| Ok((-1.0, -2.0)))).unwrap();
        assert_eq!(r.best, pt(300.0, 2000.0));
        assert_eq!(r.direction, Direction::FromA);
    }

    #[test]
    fn failures_are_recorded() {
        let a = tone();
        let s = spec(&a, pt(300.0, 2000.0), pt(320.0, 2000.0));
        let flaky = FnOracle(|c: &Clip| {
            let p = c.formants.unwrap();
            if p.f1_hz == 310.0 {
                Err(AmbiguityError::Oracle("boom".into()))
            } else {
                Ok((-p.f1_hz, -300.0))
            }
        });
        let r = search_ambiguous(&s, &StubShifter::default(), &flaky).unwrap();
        assert_eq!(r.failures.len(), 2);
        assert_eq!(r.trace.len(), 4);
        let dead = FnOracle(|_: &Clip| Err(AmbiguityError::Oracle("down".into())));
        assert!(matches!(
            search_ambiguous(&s, &StubShifter::default(), &dead),
            Err(AmbiguityError::AllFailed(_))
        ));
    }

    #[test]
    fn parallel_matches_serial() {
        let a = tone();
        let mut s = spec(&a, pt(305.89, 2440.77), pt(476.85, 1565.45));
        let serial = search_ambiguous(&s, &StubShifter::default(), &LinearMockOracle::default()).unwrap();
        s.parallelism = 4;
        let par = search_ambiguous(&s, &StubShifter::default(), &LinearMockOracle::default()).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn stub_shifter_contract() {
        let clip = Clip {
            audio: tone(),
            formants: None,
        };
        let s = StubShifter::default();
        let p = pt(300.0, 2000.0);
        let out = s.shift(&clip, p, p).unwrap();
        assert_eq!(out.audio, clip.audio);
        assert_eq!(s.requests(), vec![(p, p)]);
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response("OK -1.5 -2.25\n").unwrap(), (-1.5, -2.25));
        assert!(matches!(parse_response("ERR no model"), Err(AmbiguityError::Oracle(m)) if m == "no model"));
        assert!(matches!(parse_response("HELLO"), Err(AmbiguityError::Protocol(_))));
        assert!(matches!(parse_response("OK 1"), Err(AmbiguityError::Protocol(_))));
    }

    #[test]
    fn process_oracle_loopback() {
        let dir = tempfile::tempdir().unwrap();
        let script = "while read cmd path a b; do if [ -f \"$path\" ]; then echo \"OK -1 -3\"; else echo \"ERR missing\"; fi; done";
        let o = ProcessOracle::spawn(script, Duration::from_secs(5), dir.path().join("scratch")).unwrap();
        let clip = Clip {
            audio: tone(),
            formants: None,
        };
        assert_eq!(o.score(&clip, "peel", "pill").unwrap(), (-1.0, -3.0));
        assert!(matches!(o.score(&clip, "two words", "pill"), Err(AmbiguityError::Protocol(_))));
    }

    #[test]
    fn process_oracle_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let o = ProcessOracle::spawn("sleep 5", Duration::from_millis(100), dir.path().to_path_buf()).unwrap();
        let clip = Clip {
            audio: tone(),
            formants: None,
        };
        assert!(matches!(o.score(&clip, "a", "b"), Err(AmbiguityError::Timeout(_))));
    }
}
