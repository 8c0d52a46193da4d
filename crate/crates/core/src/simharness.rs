//! Synthetic borrower populations and evaluation.
//!
//! Features are Gaussian and labels come from a known logistic model, so the
//! Bayes-optimal scorer is available as a reference point.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ApplicantEvent, EngineConfig, Label, OutcomeEvent, StreamItem};
use crate::error::{Error, Result};
use crate::policy::Decision;
use crate::runtime::{
    measure_latency, run_to_memory, DecisionRecord, FeedbackEvent, LatencySummary, RunError,
    RunOptions,
};
use crate::scoring::logistic;

/// Mean and standard deviation of one generated feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDistribution {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    /// Index of the first application generated under the new truth.
    pub at_event: u64,
    pub new_intercept: f64,
    pub new_coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Number of applications.
    pub n_events: u64,
    pub feature_dim: usize,
    pub true_intercept: f64,
    pub true_coefficients: Vec<f64>,
    pub feature_distribution: Vec<FeatureDistribution>,
    /// Outcome of application `i` arrives right after application `i + delay`.
    pub label_delay_events: u64,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    pub seed: u64,
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Scenario {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.feature_dim;
        if self.true_coefficients.len() != n {
            return Err(bad("true_coefficients", format!("expected {n} values")));
        }
        if self.feature_distribution.len() != n {
            return Err(bad("feature_distribution", format!("expected {n} entries")));
        }
        if !self.true_intercept.is_finite() || self.true_coefficients.iter().any(|c| !c.is_finite())
        {
            return Err(bad("true_coefficients", "must be finite"));
        }
        for d in &self.feature_distribution {
            if !d.mean.is_finite() || !d.std.is_finite() || d.std <= 0.0 {
                return Err(bad(
                    "feature_distribution",
                    "std must be positive and finite",
                ));
            }
        }
        if let Some(d) = &self.drift {
            if d.at_event >= self.n_events {
                return Err(bad("drift.at_event", "must be below n_events"));
            }
            if d.new_coefficients.len() != n {
                return Err(bad(
                    "drift.new_coefficients",
                    format!("expected {n} values"),
                ));
            }
            if !d.new_intercept.is_finite() || d.new_coefficients.iter().any(|c| !c.is_finite()) {
                return Err(bad("drift.new_coefficients", "must be finite"));
            }
        }
        Ok(())
    }

    /// A single-truth scenario with standard normal features.
    pub fn stationary(n_events: u64, intercept: f64, coefficients: Vec<f64>, seed: u64) -> Self {
        Self {
            n_events,
            feature_dim: coefficients.len(),
            true_intercept: intercept,
            feature_distribution: vec![
                FeatureDistribution {
                    mean: 0.0,
                    std: 1.0
                };
                coefficients.len()
            ],
            true_coefficients: coefficients,
            label_delay_events: 0,
            drift: None,
            seed,
        }
    }

    /// Truth in force for application `index`.
    pub fn truth_at(&self, index: u64) -> (f64, &[f64]) {
        match &self.drift {
            Some(d) if index >= d.at_event => (d.new_intercept, &d.new_coefficients),
            _ => (self.true_intercept, &self.true_coefficients),
        }
    }
}

/// Ground truth for one generated application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub applicant_id: String,
    pub index: u64,
    pub true_pd: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub items: Vec<StreamItem<f64>>,
    pub truth: Vec<TruthRow>,
}

pub fn applicant_id(index: u64) -> String {
    format!("app-{index:07}")
}

const STEP_MS: i64 = 1000;

/// Generates the application and outcome stream for `spec`.
pub fn generate_stream(spec: &ScenarioSpec) -> Result<GeneratedStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normals: Vec<Normal<f64>> = spec
        .feature_distribution
        .iter()
        .map(|d| Normal::new(d.mean, d.std).expect("validated std"))
        .collect();
    let n = spec.n_events as usize;
    let delay = spec.label_delay_events;
    let mut items = Vec::with_capacity(2 * n);
    let mut truth: Vec<TruthRow> = Vec::with_capacity(n);

    let outcome = |row: &TruthRow, t: i64| {
        StreamItem::Outcome(OutcomeEvent {
            applicant_id: row.applicant_id.clone(),
            outcome_time_ms: t,
            label: row.label,
        })
    };

    for i in 0..spec.n_events {
        let features: Vec<f64> = normals.iter().map(|d| d.sample(&mut rng)).collect();
        let (b, beta) = spec.truth_at(i);
        let z = b + beta.iter().zip(&features).map(|(c, x)| c * x).sum::<f64>();
        let true_pd = logistic(z);
        let label = if rng.random::<f64>() < true_pd {
            Label::Defaulted
        } else {
            Label::Repaid
        };
        let t = i as i64 * STEP_MS;
        let id = applicant_id(i);
        items.push(StreamItem::Application(ApplicantEvent {
            applicant_id: id.clone(),
            event_time_ms: t,
            raw_features: features,
        }));
        truth.push(TruthRow {
            applicant_id: id,
            index: i,
            true_pd,
            label,
        });
        if i >= delay {
            items.push(outcome(&truth[(i - delay) as usize], t));
        }
    }
    let end = spec.n_events as i64 * STEP_MS;
    for row in &truth[n.saturating_sub(delay as usize)..] {
        items.push(outcome(row, end));
    }
    Ok(GeneratedStream { items, truth })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("no label for applicant {0}")]
    MissingLabel(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, decision: Decision, label: Label) {
        match (decision, label.is_default()) {
            (Decision::Reject, true) => self.tp += 1,
            (Decision::Reject, false) => self.fp += 1,
            (Decision::Approve, false) => self.tn += 1,
            (Decision::Approve, true) => self.fn_ += 1,
            (Decision::Review, _) => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    pub window: usize,
    /// Position of the last decision in the window, 1-based.
    pub end: usize,
    pub accuracy: Option<f64>,
    pub reviews: u64,
}

pub const HISTOGRAM_BINS: usize = 20;

/// PD histograms split by true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub defaulted: Vec<u64>,
    pub repaid: Vec<u64>,
}

impl ScoreHistogram {
    fn new() -> Self {
        Self {
            edges: (0..=HISTOGRAM_BINS)
                .map(|i| i as f64 / HISTOGRAM_BINS as f64)
                .collect(),
            defaulted: vec![0; HISTOGRAM_BINS],
            repaid: vec![0; HISTOGRAM_BINS],
        }
    }

    fn add(&mut self, pd: f64, label: Label) {
        let bin = ((pd * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        match label {
            Label::Defaulted => self.defaulted[bin] += 1,
            Label::Repaid => self.repaid[bin] += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub decisions: u64,
    pub reviews: u64,
    pub confusion: Confusion,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Accuracy over the last quarter of decisions.
    pub final_quartile_accuracy: Option<f64>,
    pub rolling_window: usize,
    pub rolling_accuracy: Vec<RollingPoint>,
    pub histogram: ScoreHistogram,
    /// Window metrics from the feedback agent.
    pub feedback: Vec<FeedbackEvent>,
    pub latency: Option<LatencySummary>,
}

fn confusion_of<'a>(rows: impl Iterator<Item = (&'a DecisionRecord, Label)>) -> Confusion {
    let mut c = Confusion::default();
    for (r, l) in rows {
        c.add(r.decision, l);
    }
    c
}

/// Scores an audit against true labels.
///
/// Decisions are taken in ingress order; `window` sets the rolling-accuracy
/// window length in decisions.
pub fn evaluate(
    audit: &[DecisionRecord],
    labels: &HashMap<String, Label>,
    window: usize,
) -> std::result::Result<MetricsReport, JoinError> {
    let mut rows: Vec<(&DecisionRecord, Label)> = audit
        .iter()
        .map(|r| {
            labels
                .get(&r.applicant_id)
                .map(|&l| (r, l))
                .ok_or_else(|| JoinError::MissingLabel(r.applicant_id.clone()))
        })
        .collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|(r, _)| r.ingress_seq);

    let confusion = confusion_of(rows.iter().copied());
    let mut histogram = ScoreHistogram::new();
    for (r, l) in &rows {
        histogram.add(r.assessment.pd, *l);
    }
    let quartile_start = rows.len() - rows.len() / 4;
    let window = window.max(1);
    let rolling_accuracy = rows
        .chunks(window)
        .enumerate()
        .map(|(i, chunk)| RollingPoint {
            window: i,
            end: i * window + chunk.len(),
            accuracy: confusion_of(chunk.iter().copied()).accuracy(),
            reviews: chunk
                .iter()
                .filter(|(r, _)| r.decision == Decision::Review)
                .count() as u64,
        })
        .collect();

    Ok(MetricsReport {
        decisions: rows.len() as u64,
        reviews: rows
            .iter()
            .filter(|(r, _)| r.decision == Decision::Review)
            .count() as u64,
        accuracy: confusion.accuracy(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        confusion,
        final_quartile_accuracy: confusion_of(rows[quartile_start..].iter().copied()).accuracy(),
        rolling_window: window,
        rolling_accuracy,
        histogram,
        feedback: Vec::new(),
        latency: None,
    })
}

pub fn label_map(truth: &[TruthRow]) -> HashMap<String, Label> {
    truth
        .iter()
        .map(|t| (t.applicant_id.clone(), t.label))
        .collect()
}

/// Accuracy of predicting default whenever the true PD exceeds one half.
pub fn bayes_accuracy(truth: &[TruthRow]) -> Option<f64> {
    let correct = truth
        .iter()
        .filter(|t| (t.true_pd > 0.5) == t.label.is_default())
        .count();
    ratio(correct as u64, truth.len() as u64)
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] Error),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Join(#[from] JoinError),
}

/// One engine run over a generated stream.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub report: MetricsReport,
    pub records: Vec<DecisionRecord>,
}

/// Runs the engine over `stream` and evaluates the result.
pub fn simulate(
    stream: &GeneratedStream,
    config: &EngineConfig,
    options: RunOptions,
) -> std::result::Result<SimulationRun, HarnessError> {
    let (sink, stats) = run_to_memory(stream.items.iter().cloned(), config, options)?;
    let mut report = evaluate(
        &sink.records,
        &label_map(&stream.truth),
        config.metric_window,
    )?;
    report.feedback = sink.feedback;
    report.latency = measure_latency(&stats).ok();
    Ok(SimulationRun {
        report,
        records: sink.records,
    })
}

/// Adaptive engine and frozen baseline on the same stream.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub adaptive: SimulationRun,
    pub baseline: SimulationRun,
}

/// Applications the baseline may learn from before freezing.
pub fn warmup_len(n_events: u64) -> u64 {
    n_events / 5
}

/// Runs the adaptive engine, then the baseline frozen after the warmup prefix.
pub fn run_comparison(
    spec: &ScenarioSpec,
    config: &EngineConfig,
) -> std::result::Result<Comparison, HarnessError> {
    let stream = generate_stream(spec)?;
    let adaptive = simulate(&stream, config, RunOptions::default())?;
    let baseline = simulate(
        &stream,
        config,
        RunOptions {
            freeze_after: Some(warmup_len(spec.n_events)),
        },
    )?;
    Ok(Comparison { adaptive, baseline })
}

/// Throughput and latency of one pipelined run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub applications: u64,
    pub feature_dim: usize,
    pub scoring_shards: usize,
    pub queue_capacity: usize,
    /// Offered load in applications per second; `None` when unpaced.
    pub offered_rate: Option<f64>,
    pub decisions: u64,
    pub elapsed_us: u64,
    pub throughput_per_s: f64,
    pub latency: LatencySummary,
}

/// Runs `n_events` applications with standard normal features through the
/// pipelined runtime, writing canonical audit lines to `sink`.
///
/// With `rate` set, applications enter at that many per second; otherwise
/// ingress runs as fast as backpressure allows.
pub fn bench<W: std::io::Write + Send>(
    n_events: u64,
    config: &EngineConfig,
    seed: u64,
    rate: Option<f64>,
    sink: W,
) -> std::result::Result<BenchReport, HarnessError> {
    let dim = config.feature_dim;
    let coefficients = (0..dim)
        .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
        .collect();
    let mut spec = ScenarioSpec::stationary(n_events, -1.0, coefficients, seed);
    spec.label_delay_events = 100;
    let stream = generate_stream(&spec)?;
    let config = EngineConfig {
        deterministic_mode: false,
        ..config.clone()
    };
    let mut sink = crate::audit::JsonlSink::new(sink, std::io::sink());
    let start = std::time::Instant::now();
    let mut applications = 0u64;
    let paced = stream.items.into_iter().map(|item| {
        if let (Some(rate), StreamItem::Application(_)) = (rate, &item) {
            let due = start + std::time::Duration::from_secs_f64(applications as f64 / rate);
            applications += 1;
            if let Some(wait) = due.checked_duration_since(std::time::Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        Ok::<_, std::convert::Infallible>(item)
    });
    let stats = crate::runtime::run_pipeline(paced, &config, RunOptions::default(), &mut sink)?;
    let latency = measure_latency(&stats)?;
    Ok(BenchReport {
        applications: stats.applications,
        feature_dim: dim,
        scoring_shards: config.scoring_shards,
        queue_capacity: config.queue_capacity,
        offered_rate: rate,
        decisions: stats.decisions,
        elapsed_us: stats.elapsed_us,
        throughput_per_s: stats.throughput(),
        latency,
    })
}
