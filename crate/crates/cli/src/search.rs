//! `ambiguity search` and `serve`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use prosody_core::ambiguity::{
    search_ambiguous, AmbiguityError, Clip, FormantPoint, FormantShifter, LinearMockOracle, ProcessOracle, SearchSpec,
    StubShifter, WordProbOracle,
};
use prosody_core::dsp::{read_wav, write_wav, WavFormat};
use prosody_session::{ExperimentConfig, Service};

use crate::{print, usage, AmbiguityCmd, Ctx, ServeArgs};

/// Runs `CMD in.wav out.wav f1 f2 f1' f2'` once per shift.
struct CommandShifter {
    command: String,
    scratch: PathBuf,
    counter: AtomicUsize,
}

impl FormantShifter for CommandShifter {
    fn shift(&self, clip: &Clip, from: FormantPoint, to: FormantPoint) -> Result<Clip, AmbiguityError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let input = self.scratch.join(format!("shift-{n}-in.wav"));
        let output = self.scratch.join(format!("shift-{n}-out.wav"));
        write_wav(&clip.audio, &input, WavFormat::Float32)?;
        let status = Command::new("sh")
            .arg("-c")
            .arg(format!("{} \"$@\"", self.command))
            .arg("shifter")
            .arg(&input)
            .arg(&output)
            .args([from.f1_hz, from.f2_hz, to.f1_hz, to.f2_hz].map(|v| v.to_string()))
            .status()?;
        if !status.success() {
            return Err(AmbiguityError::Shifter(format!("shifter exited with {status}")));
        }
        let audio = read_wav(&output)?;
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        Ok(Clip { audio, formants: Some(to) })
    }
}

pub fn ambiguity(ctx: &Ctx, cmd: AmbiguityCmd) -> anyhow::Result<()> {
    let AmbiguityCmd::Search {
        clip_a,
        origin,
        clip_b,
        target,
        words,
        step_hz,
        oracle_cmd,
        mock_oracle,
        shifter_cmd,
        timeout_s,
        parallelism,
        trace,
    } = cmd;
    let Some((wa, wb)) = words.split_once(',') else {
        return Err(usage("--words must be `a,b`"));
    };
    let (wa, wb) = (wa.trim(), wb.trim());
    if !(timeout_s > 0.0 && timeout_s.is_finite()) {
        return Err(usage("--timeout-s must be > 0"));
    }
    let a = read_wav(&clip_a).with_context(|| clip_a.display().to_string())?;
    let b = read_wav(&clip_b).with_context(|| clip_b.display().to_string())?;
    let scratch = ctx.out(&PathBuf::from("ambiguity-scratch"));
    std::fs::create_dir_all(&scratch)?;

    let oracle: Box<dyn WordProbOracle> = match (mock_oracle, oracle_cmd) {
        (true, _) => Box::new(LinearMockOracle::default()),
        (false, Some(cmd)) => Box::new(ProcessOracle::spawn(&cmd, Duration::from_secs_f64(timeout_s), scratch.join("oracle"))?),
        (false, None) => return Err(usage("pass --oracle-cmd or --mock-oracle")),
    };
    let shifter: Box<dyn FormantShifter> = match shifter_cmd {
        Some(command) => {
            let dir = scratch.join("shifter");
            std::fs::create_dir_all(&dir)?;
            Box::new(CommandShifter { command, scratch: dir, counter: AtomicUsize::new(0) })
        }
        None => {
            log::warn!("no --shifter-cmd: clips are scored unmodified, tagged with the grid point");
            Box::new(StubShifter::default())
        }
    };
    let spec = SearchSpec {
        clip_a: &a,
        origin,
        clip_b: &b,
        target,
        words: (wa, wb),
        step_hz,
        parallelism,
    };
    let result = search_ambiguous(&spec, shifter.as_ref(), oracle.as_ref())?;
    for f in &result.failures {
        log::warn!("({}, {}) {:?}: {}", f.point.f1_hz, f.point.f2_hz, f.direction, f.error);
    }
    if let Some(p) = trace {
        let mut csv = String::from("direction,f1_hz,f2_hz,logp_a,logp_b,delta\n");
        for e in &result.trace {
            let _ = writeln!(
                csv,
                "{:?},{},{},{},{},{}",
                e.direction, e.point.f1_hz, e.point.f2_hz, e.logp_a, e.logp_b, e.delta()
            );
        }
        ctx.write(&p, csv)?;
    }
    let summary = serde_json::json!({
        "best": result.best,
        "delta_logprob": result.delta_logprob,
        "direction": result.direction,
        "n_scored": result.trace.len(),
        "n_failed": result.failures.len(),
    });
    print(&(serde_json::to_string_pretty(&summary)? + "\n"))
}

pub fn serve(ctx: &Ctx, args: ServeArgs) -> anyhow::Result<()> {
    let configs = args
        .config
        .iter()
        .map(|p| ExperimentConfig::load(p).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let data_dir = args
        .data_dir
        .clone()
        .or_else(|| ctx.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let service = Arc::new(Service::new(configs, &data_dir)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        prosody_session::http::serve(service, listener).await?;
        Ok(())
    })
}
