//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 input
//! error, 4 replay mismatch.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audit::{self, AtomicFile, JsonlSink};
use crate::domain::{validate_config, EngineConfig, Label, StreamItem};
use crate::error::Error;
use crate::events::{read_all, read_events};
use crate::runtime::{run_pipeline, AuditSink, PipelineStats, RunError, RunOptions};
use crate::simharness::{
    self, bayes_accuracy, evaluate, generate_stream, HarnessError, MetricsReport, ScenarioSpec,
    SimulationRun,
};

pub const ENGINE_VERSION: &str = concat!("creditflow ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "creditflow",
    version,
    about = "Streaming credit-risk decision engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score an event file and write an audit log plus manifest.
    Score(ScoreArgs),
    /// Run a synthetic scenario and write metrics and plot series.
    Simulate(SimulateArgs),
    /// Re-run a recorded scoring run and compare audits byte for byte.
    Replay(ReplayArgs),
    /// Recompute metrics from an audit log and a file of outcomes.
    Report(ReportArgs),
    /// Measure pipelined throughput and latency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub audit: PathBuf,
    /// Force the single-threaded deterministic schedule.
    #[arg(long)]
    pub deterministic: bool,
    /// Manifest path; defaults to `<audit stem>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Report path; series CSV files go next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Generator seed, overriding the scenario file.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub compare_baseline: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub audit: PathBuf,
    /// Event file whose outcome lines supply the labels.
    #[arg(long)]
    pub truth: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rolling accuracy window, in decisions.
    #[arg(long, default_value_t = 250)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Applications in the saturated run.
    #[arg(long, default_value_t = 100_000)]
    pub events: u64,
    /// Applications in the paced run; 0 skips it.
    #[arg(long, default_value_t = 20_000)]
    pub paced_events: u64,
    /// Offered load of the paced run, applications per second.
    #[arg(long, default_value_t = 10_000.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    #[arg(long, default_value_t = 1024)]
    pub queue_capacity: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Optional engine config; its feature_dim is replaced by --features.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new(3, message)
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::new(1, format!("{}: {e}", path.display()))
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(e) => Self::config(describe(&e)),
            RunError::Stream { message, .. } => Self::input(message),
            RunError::Sink(e) => Self::new(1, format!("writing audit: {e}")),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Scenario(e) => Self::config(describe(&e)),
            HarnessError::Run(e) => e.into(),
            HarnessError::Join(e) => Self::input(e.to_string()),
        }
    }
}

fn describe(e: &Error) -> String {
    match e.config_key() {
        Some(key) => format!("config key \"{key}\": {e}"),
        None => e.to_string(),
    }
}

fn read_text(path: &Path, err: fn(String) -> CliError) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))
}

/// Loads and validates an engine config, resolving defaults.
pub fn load_config(path: &Path) -> Result<EngineConfig, CliError> {
    let text = read_text(path, CliError::config)?;
    let config: EngineConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    validate_config(config).map_err(|e| CliError::config(describe(&e)))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text = read_text(path, CliError::config)?;
    let spec: ScenarioSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    spec.validate()
        .map_err(|e| CliError::config(describe(&e)))?;
    Ok(spec)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "audit".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    audit::write_atomic(path, &bytes).map_err(|e| CliError::io(path, e))
}

/// Run counters recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub applications: u64,
    pub outcomes: u64,
    pub decisions: u64,
    pub skipped_events: u64,
    pub orphan_outcomes: u64,
    pub early_outcomes: u64,
    pub evicted_pending: u64,
    pub windows_closed: u64,
    pub drift_flags: u64,
    pub published_snapshots: u64,
}

impl From<&PipelineStats> for RunCounters {
    fn from(s: &PipelineStats) -> Self {
        Self {
            applications: s.applications,
            outcomes: s.outcomes,
            decisions: s.decisions,
            skipped_events: s.skipped_events,
            orphan_outcomes: s.orphan_outcomes,
            early_outcomes: s.early_outcomes,
            evicted_pending: s.evicted_pending,
            windows_closed: s.windows_closed,
            drift_flags: s.drift_flags,
            published_snapshots: s.published_snapshots,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub engine_version: String,
    /// Authoritative on replay; overrides `config.seed`.
    pub seed: u64,
    pub config: EngineConfig,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub input: PathBuf,
    pub audit: PathBuf,
    pub feedback: PathBuf,
    pub counters: RunCounters,
}

fn run_file(
    input: &Path,
    config: &EngineConfig,
    sink: &mut (impl AuditSink + Send),
) -> Result<PipelineStats, CliError> {
    let file =
        File::open(input).map_err(|e| CliError::input(format!("{}: {e}", input.display())))?;
    Ok(run_pipeline(
        read_events(BufReader::new(file)),
        config,
        RunOptions::default(),
        sink,
    )?)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<RunManifest, CliError> {
    let mut config = load_config(&args.config)?;
    if args.deterministic {
        config.deterministic_mode = true;
    }
    let started_at_ms = now_ms();
    let feedback_path = sibling(&args.audit, "feedback.jsonl");
    let audit_file = AtomicFile::create(&args.audit).map_err(|e| CliError::io(&args.audit, e))?;
    let feedback_file =
        AtomicFile::create(&feedback_path).map_err(|e| CliError::io(&feedback_path, e))?;
    let mut sink = JsonlSink::new(audit_file, feedback_file);
    let stats = run_file(&args.input, &config, &mut sink)?;
    let (audit_file, feedback_file) = sink.into_inner();
    audit_file
        .commit()
        .map_err(|e| CliError::io(&args.audit, e))?;
    feedback_file
        .commit()
        .map_err(|e| CliError::io(&feedback_path, e))?;

    let manifest = RunManifest {
        engine_version: ENGINE_VERSION.to_string(),
        seed: config.seed,
        config,
        started_at_ms,
        finished_at_ms: now_ms(),
        input: absolute(&args.input),
        audit: absolute(&args.audit),
        feedback: absolute(&feedback_path),
        counters: RunCounters::from(&stats),
    };
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| sibling(&args.audit, "manifest.json"));
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Index (1-based) of the first line where two texts differ.
pub fn first_divergent_line(a: &[u8], b: &[u8]) -> Option<usize> {
    let mut la = a.split_inclusive(|&c| c == b'\n');
    let mut lb = b.split_inclusive(|&c| c == b'\n');
    let mut line = 1;
    loop {
        match (la.next(), lb.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(line),
            _ => line += 1,
        }
    }
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let text = read_text(&args.manifest, CliError::input)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: {e}", args.manifest.display())))?;
    let mut config = manifest.config.clone();
    config.seed = manifest.seed;
    config.deterministic_mode = true;
    let config = validate_config(config).map_err(|e| CliError::config(describe(&e)))?;

    let mut sink = JsonlSink::new(Vec::new(), io::sink());
    run_file(&manifest.input, &config, &mut sink)?;
    let (regenerated, _) = sink.into_inner();
    let recorded = fs::read(&manifest.audit)
        .map_err(|e| CliError::input(format!("{}: {e}", manifest.audit.display())))?;
    match first_divergent_line(&recorded, &regenerated) {
        None => Ok(()),
        Some(line) => Err(CliError::new(
            4,
            format!(
                "replay diverges from {} at line {line}",
                manifest.audit.display()
            ),
        )),
    }
}

/// Labels from the outcome lines of an event file.
pub fn load_labels(path: &Path) -> Result<HashMap<String, Label>, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let items = read_all(BufReader::new(file)).map_err(|e| CliError::input(e.to_string()))?;
    Ok(items
        .into_iter()
        .filter_map(|item| match item {
            StreamItem::Outcome(o) => Some((o.applicant_id, o.label)),
            StreamItem::Application(_) => None,
        })
        .collect())
}

pub fn cmd_report(args: &ReportArgs) -> Result<MetricsReport, CliError> {
    let records = audit::read_audit(&args.audit)
        .map_err(|e| CliError::input(format!("{}: {e}", args.audit.display())))?;
    let labels = load_labels(&args.truth)?;
    let report =
        evaluate(&records, &labels, args.window).map_err(|e| CliError::input(e.to_string()))?;
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => {
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
        }
    }
    Ok(report)
}

/// Summary written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub engine_version: String,
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub config: EngineConfig,
    pub bayes_accuracy: Option<f64>,
    pub bayes_final_quartile_accuracy: Option<f64>,
    pub adaptive: MetricsReport,
    pub baseline: Option<MetricsReport>,
    /// Applications the baseline learned from before freezing.
    pub baseline_warmup: Option<u64>,
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn write_series(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let path = dir.join(format!("series_{name}.csv"));
    audit::write_atomic(&path, body.as_bytes()).map_err(|e| CliError::io(&path, e))
}

fn simulation_series(
    dir: &Path,
    adaptive: &MetricsReport,
    baseline: Option<&MetricsReport>,
) -> Result<(), CliError> {
    let mut rolling = String::from("window,end,adaptive_accuracy,baseline_accuracy\n");
    for (i, p) in adaptive.rolling_accuracy.iter().enumerate() {
        let b = baseline
            .and_then(|b| b.rolling_accuracy.get(i))
            .and_then(|b| b.accuracy);
        rolling.push_str(&format!(
            "{},{},{},{}\n",
            p.window,
            p.end,
            csv_opt(p.accuracy),
            csv_opt(b)
        ));
    }
    write_series(dir, "rolling_accuracy", &rolling)?;

    let h = &adaptive.histogram;
    let mut hist = String::from("pd_low,pd_high,defaulted,repaid\n");
    for i in 0..h.defaulted.len() {
        hist.push_str(&format!(
            "{:.2},{:.2},{},{}\n",
            h.edges[i],
            h.edges[i + 1],
            h.defaulted[i],
            h.repaid[i]
        ));
    }
    write_series(dir, "score_histogram", &hist)?;

    let mut fb = String::from("window,metric,previous,drift,published_version,loss\n");
    for e in &adaptive.feedback {
        fb.push_str(&format!(
            "{},{:.6},{},{},{},{}\n",
            e.window,
            e.metric,
            csv_opt(e.previous),
            e.drift,
            e.published_version
                .map_or_else(String::new, |v| v.to_string()),
            csv_opt(e.loss)
        ));
    }
    write_series(dir, "feedback", &fb)?;

    let mut lat = String::from("run,p50_us,p99_us,max_us,mean_us,throughput_per_s,samples\n");
    let runs = [("adaptive", Some(adaptive)), ("baseline", baseline)];
    for (name, report) in runs {
        if let Some(l) = report.and_then(|r| r.latency) {
            lat.push_str(&format!(
                "{name},{},{},{},{:.3},{:.1},{}\n",
                l.p50_us, l.p99_us, l.max_us, l.mean_us, l.throughput_per_s, l.samples
            ));
        }
    }
    write_series(dir, "latency", &lat)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulationSummary, CliError> {
    let mut spec = load_scenario(&args.scenario)?;
    spec.seed = args.seed;
    let mut config = load_config(&args.config)?;
    if config.feature_dim != spec.feature_dim {
        return Err(CliError::config(format!(
            "config key \"feature_dim\": {} does not match scenario feature_dim {}",
            config.feature_dim, spec.feature_dim
        )));
    }
    config.deterministic_mode = true;

    let stream = generate_stream(&spec).map_err(|e| CliError::config(describe(&e)))?;
    let adaptive = simharness::simulate(&stream, &config, RunOptions::default())?;
    let (baseline, warmup) = if args.compare_baseline {
        let warmup = simharness::warmup_len(spec.n_events);
        let options = RunOptions {
            freeze_after: Some(warmup),
        };
        (
            Some(simharness::simulate(&stream, &config, options)?),
            Some(warmup),
        )
    } else {
        (None, None)
    };

    let dir = match args.report.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let base_report = baseline.as_ref().map(|b| &b.report);
    simulation_series(&dir, &adaptive.report, base_report)?;

    // wall-clock latency lives in the series file so the summary is reproducible
    let strip = |run: SimulationRun| MetricsReport {
        latency: None,
        ..run.report
    };
    let quartile = stream.truth.len() - stream.truth.len() / 4;
    let summary = SimulationSummary {
        engine_version: ENGINE_VERSION.to_string(),
        seed: args.seed,
        bayes_accuracy: bayes_accuracy(&stream.truth),
        bayes_final_quartile_accuracy: bayes_accuracy(&stream.truth[quartile..]),
        scenario: spec,
        config,
        adaptive: strip(adaptive),
        baseline: baseline.map(strip),
        baseline_warmup: warmup,
    };
    write_json(&args.report, &summary)?;
    Ok(summary)
}

/// Saturated and paced bench runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub engine_version: String,
    pub saturated: simharness::BenchReport,
    pub paced: Option<simharness::BenchReport>,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchSummary, CliError> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => EngineConfig::new(args.features),
    };
    config.feature_dim = args.features;
    config.fusion_coefficients = None;
    config.scoring_shards = args.shards;
    config.queue_capacity = args.queue_capacity;
    let config = validate_config(config).map_err(|e| CliError::config(describe(&e)))?;
    if !(args.rate.is_finite() && args.rate > 0.0) {
        return Err(CliError::config("--rate must be positive"));
    }
    let saturated = simharness::bench(args.events, &config, args.seed, None, io::sink())?;
    let paced = match args.paced_events {
        0 => None,
        n => Some(simharness::bench(
            n,
            &config,
            args.seed,
            Some(args.rate),
            io::sink(),
        )?),
    };
    let summary = BenchSummary {
        engine_version: ENGINE_VERSION.to_string(),
        saturated,
        paced,
    };
    if let Some(path) = &args.report {
        write_json(path, &summary)?;
    }
    Ok(summary)
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    let mut say = |line: String| {
        let _ = writeln!(out, "{line}");
    };
    match &cli.command {
        Command::Score(args) => {
            let m = cmd_score(args)?;
            say(format!(
                "scored {} applications: {} decisions, {} skipped, {} drift flags",
                m.counters.applications,
                m.counters.decisions,
                m.counters.skipped_events,
                m.counters.drift_flags
            ));
        }
        Command::Simulate(args) => {
            let s = cmd_simulate(args)?;
            let fmt =
                |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{:.2}%", 100.0 * x));
            say(format!(
                "adaptive accuracy {} (final quartile {})",
                fmt(s.adaptive.accuracy),
                fmt(s.adaptive.final_quartile_accuracy)
            ));
            if let Some(b) = &s.baseline {
                say(format!(
                    "baseline accuracy {} (final quartile {})",
                    fmt(b.accuracy),
                    fmt(b.final_quartile_accuracy)
                ));
            }
        }
        Command::Replay(args) => {
            cmd_replay(args)?;
            say("replay matches recorded audit".into());
        }
        Command::Report(args) => {
            cmd_report(args)?;
        }
        Command::Bench(args) => {
            let s = cmd_bench(args)?;
            for (name, r) in [
                ("saturated", Some(&s.saturated)),
                ("paced", s.paced.as_ref()),
            ] {
                let Some(r) = r else { continue };
                say(format!(
                    "{name}: {} decisions in {:.3} s, {:.0} decisions/s, p50 {} us, p99 {} us, max {} us",
                    r.decisions,
                    r.elapsed_us as f64 / 1e6,
                    r.throughput_per_s,
                    r.latency.p50_us,
                    r.latency.p99_us,
                    r.latency.max_us
                ));
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
