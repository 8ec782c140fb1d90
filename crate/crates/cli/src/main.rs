//! `stillwatch` command-line tool.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when the input
//! data could not be processed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use stillwatch::analytics::{self, Clock, TailMode};
use stillwatch::config::PipelineConfig;
use stillwatch::detector::{Detector, DetectorBackend, ProcessBackend, TableBackend};
use stillwatch::eval::{self, FrameScores, ScoreReport};
use stillwatch::labels::GroundTruth;
use stillwatch::pipeline::{self, Options, RunOutputs};
use stillwatch::synth::{Scene, SceneScript};
use stillwatch::tracker::{self, FsyncPolicy, MIN_EVENT_MS};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] stillwatch::Error),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "stillwatch", version, about = "Anonymous inactivity monitoring for RGB-D streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a frame sequence into inactivity events.
    Run(RunArgs),
    /// Render a scripted synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Score predictions against ground-truth labels.
    Eval(EvalArgs),
    /// Summary statistics over an event log.
    Stats(StatsArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("detector").required(true))]
struct RunArgs {
    /// Sequence directory.
    #[arg(long)]
    seq: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set theta=25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Precomputed detections (JSON lines).
    #[arg(long, group = "detector")]
    detections: Option<PathBuf>,
    /// Use the boxes in a labels file as a perfect detector.
    #[arg(long, group = "detector")]
    stub_labels: Option<PathBuf>,
    /// Shell command speaking the line protocol on stdin/stdout.
    #[arg(long, group = "detector")]
    detector_cmd: Option<String>,
    /// Event log to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-frame states; defaults to `states.jsonl` next to the event log.
    #[arg(long)]
    states: Option<PathBuf>,
    /// Run report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Keep pets in the motion mask.
    #[arg(long)]
    no_pet_exclusion: bool,
    /// fsync the event log after each event.
    #[arg(long)]
    fsync: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene script (JSON).
    #[arg(long)]
    script: PathBuf,
    /// Output sequence directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace the script's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Event log, or a directory of `<name>/events.jsonl` runs.
    #[arg(long)]
    pred: PathBuf,
    /// Labels file, or a directory of `<name>/labels.jsonl` sequences.
    #[arg(long)]
    gt: PathBuf,
    /// Per-frame states; defaults to `states.jsonl` next to the event log.
    #[arg(long)]
    states: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5")]
    tolerance: Vec<usize>,
    /// Scores (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for directory mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailArg {
    QuartileMean,
    Percentile,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    events: PathBuf,
    /// Statistics (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Duration distribution with the fitted density.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Bin width for the CSV, seconds.
    #[arg(long, default_value_t = 1.0)]
    bin_s: f64,
    /// Unix time in ms of stream timestamp 0, for the hourly profile.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    origin_ms: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_min: i32,
    #[arg(long, value_enum, default_value = "quartile-mean")]
    tail_mode: TailArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => evaluate(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(1),
                CliError::Data(_) => ExitCode::from(2),
            }
        }
    }
}

fn sibling_states(events: &Path) -> PathBuf {
    events.with_file_name("states.jsonl")
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn run(a: RunArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for s in &a.overrides {
        cfg.set(s).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let backend: Box<dyn DetectorBackend> = if let Some(p) = &a.detections {
        Box::new(TableBackend::from_file(p)?)
    } else if let Some(p) = &a.stub_labels {
        Box::new(TableBackend::from_ground_truth(&GroundTruth::read(p)?))
    } else if let Some(c) = &a.detector_cmd {
        Box::new(ProcessBackend::spawn(c)?)
    } else {
        unreachable!("clap requires one detector source")
    };
    let detector = Detector::new(backend, cfg.detector_period_s);
    let states = a.states.clone().unwrap_or_else(|| sibling_states(&a.out));
    ensure_parent(&a.out)?;
    ensure_parent(&states)?;
    let opts = Options {
        pet_exclusion: !a.no_pet_exclusion,
    };
    let report = pipeline::run_sequence(
        &a.seq,
        cfg,
        detector,
        opts,
        &RunOutputs {
            events: &a.out,
            states: Some(&states),
            fsync: if a.fsync { FsyncPolicy::EveryEvent } else { FsyncPolicy::Never },
        },
    )?;
    for w in &report.warnings {
        warn!("{w}");
    }
    info!(
        "{} frames, {} events, {:.1} fps, peak retained {:?}",
        report.frames, report.events, report.fps, report.retained.peak
    );
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut script = SceneScript::load(&a.script)?;
    if let Some(seed) = a.seed {
        script.seed = seed;
    }
    let scene = Scene::new(script)?;
    let gt = scene.write(&a.out)?;
    info!(
        "wrote {} frames and {} labeled motion ranges to {}",
        gt.frame_count,
        gt.motion_active.len(),
        a.out.display()
    );
    Ok(())
}

fn score_one(events: &Path, states: &Path, gt: &Path, tolerances: &[usize]) -> CliResult<ScoreReport> {
    let gt = GroundTruth::read(gt)?;
    let events = tracker::read_events(events)?;
    let states = pipeline::read_states(states)?;
    Ok(eval::evaluate(&states, Some(&events), &gt, tolerances, MIN_EVENT_MS)?)
}

#[derive(Serialize)]
struct BatchScores {
    pooled: Vec<FrameScores>,
    sequences: BTreeMap<String, ScoreReport>,
}

fn evaluate(a: EvalArgs) -> CliResult<()> {
    if a.tolerance.is_empty() {
        return Err(CliError::Usage("--tolerance needs at least one value".into()));
    }
    let json = if a.gt.is_dir() {
        if !a.pred.is_dir() {
            return Err(CliError::Usage("--gt is a directory, so --pred must be one too".into()));
        }
        let batch = evaluate_dir(&a)?;
        print!("{}", eval::format_scores(&batch.pooled));
        serde_json::to_string_pretty(&batch)
    } else {
        let states = a.states.clone().unwrap_or_else(|| sibling_states(&a.pred));
        let r = score_one(&a.pred, &states, &a.gt, &a.tolerance)?;
        print!("{}", eval::format_scores(&r.scores));
        serde_json::to_string_pretty(&r)
    }
    .expect("scores serialize");
    if let Some(p) = &a.out {
        ensure_parent(p)?;
        fs::write(p, json + "\n").map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn evaluate_dir(a: &EvalArgs) -> CliResult<BatchScores> {
    let read_dir = |p: &Path| fs::read_dir(p).map_err(|e| CliError::Usage(format!("cannot list {}: {e}", p.display())));
    let mut names = Vec::new();
    for entry in read_dir(&a.gt)? {
        let entry = entry.map_err(|e| CliError::Usage(e.to_string()))?;
        if entry.path().join("labels.jsonl").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!("no <name>/labels.jsonl under {}", a.gt.display())));
    }

    let next = AtomicUsize::new(0);
    let results = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.clamp(1, names.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(name) = names.get(i) else { break };
                let pred = a.pred.join(name);
                let r = score_one(
                    &pred.join("events.jsonl"),
                    &pred.join("states.jsonl"),
                    &a.gt.join(name).join("labels.jsonl"),
                    &a.tolerance,
                );
                results.lock().unwrap().insert(name.clone(), r);
            });
        }
    });

    let mut sequences = BTreeMap::new();
    for (name, r) in results.into_inner().unwrap() {
        match r {
            Ok(r) => {
                sequences.insert(name, r);
            }
            Err(CliError::Data(e)) => return Err(CliError::Data(stillwatch::Error::Eval(format!("{name}: {e}")))),
            Err(e) => return Err(e),
        }
    }
    let pooled = (0..a.tolerance.len())
        .map(|k| {
            let parts: Vec<FrameScores> = sequences.values().map(|r| r.scores[k]).collect();
            eval::pool_scores(&parts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BatchScores { pooled, sequences })
}

fn stats(a: StatsArgs) -> CliResult<()> {
    if a.bin_s.is_nan() || a.bin_s <= 0.0 {
        return Err(CliError::Usage("--bin-s must be positive".into()));
    }
    let events = tracker::read_events(&a.events)?;
    let mode = match a.tail_mode {
        TailArg::QuartileMean => TailMode::QuartileMean,
        TailArg::Percentile => TailMode::Percentile,
    };
    let clock = Clock {
        origin_ms: a.origin_ms,
        utc_offset_min: a.utc_offset_min,
    };
    let r = analytics::report(&events, clock, mode)?;
    print!("{}", r.to_text());
    if let Some(p) = &a.out {
        write_json(p, &r)?;
    }
    if let Some(p) = &a.csv {
        ensure_parent(p)?;
        let d: Vec<f64> = events.iter().map(|e| e.dur_s).collect();
        fs::write(p, analytics::distribution_csv(&d, &r.exponential, a.bin_s))
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}
