//! Agent orchestration.
//!
//! Five sequential agents (acquisition, scoring, explanation, decision,
//! feedback) exchange immutable messages over ordered queues. Feedback reaches
//! back to acquisition with parameter snapshots and to the decision agent with
//! window losses over non-blocking control channels, so the blocking data path
//! is acyclic.
//!
//! Deterministic mode runs the same agents on one thread, draining every queue
//! after each ingress message. Pipelined mode gives each agent a thread and a
//! bounded queue, optionally sharding scoring by applicant id.

mod agents;
mod reference;
mod stats;

use std::fmt::Display;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_config, EngineConfig, StreamItem};
use crate::error::Error;
use crate::policy::Decision;
use crate::scoring::RiskAssessment;

pub use agents::{AgentMessage, Envelope, ModelSnapshot};
pub use reference::reference_execute;
pub use stats::{measure_latency, nearest_rank, LatencySummary, PipelineStats};

/// One decision with everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub applicant_id: String,
    pub ingress_seq: u64,
    pub event_time_ms: i64,
    pub decision: Decision,
    pub assessment: RiskAssessment<f64>,
    pub tau_used: f64,
    pub band_used: f64,
    /// Zero in deterministic mode so audits replay byte-identically.
    pub latency_us: u64,
    /// Largest attributions as `(feature index, value)`.
    pub explanation: Vec<(usize, f64)>,
}

/// Emitted by the feedback agent whenever a metric window closes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    /// Ingress sequence number of the outcome that closed the window.
    pub seq: u64,
    pub window: u64,
    pub metric: f64,
    pub previous: Option<f64>,
    pub drift: bool,
    pub published_version: Option<u64>,
    pub loss: Option<f64>,
}

/// Receives the audit stream.
pub trait AuditSink {
    fn record(&mut self, record: &DecisionRecord) -> std::io::Result<()>;

    fn feedback(&mut self, _event: &FeedbackEvent) -> std::io::Result<()> {
        Ok(())
    }

    fn terminal_error(&mut self, _message: &str) -> std::io::Result<()> {
        Ok(())
    }
}

/// Collects the audit stream in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySink {
    pub records: Vec<DecisionRecord>,
    pub feedback: Vec<FeedbackEvent>,
    pub terminal_error: Option<String>,
}

impl AuditSink for MemorySink {
    fn record(&mut self, record: &DecisionRecord) -> std::io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn feedback(&mut self, event: &FeedbackEvent) -> std::io::Result<()> {
        self.feedback.push(event.clone());
        Ok(())
    }

    fn terminal_error(&mut self, message: &str) -> std::io::Result<()> {
        self.terminal_error = Some(message.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Learning, threshold adaptation and drift response stop once this many
    /// applications have entered the pipeline.
    pub freeze_after: Option<u64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("input stream failed after {accepted} items: {message}")]
    Stream { accepted: u64, message: String },
    #[error("audit sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// Input stream element that cannot fail.
pub fn infallible<T>(
    items: impl IntoIterator<Item = T>,
) -> impl Iterator<Item = Result<T, String>> {
    items.into_iter().map(Ok)
}

/// Runs the agent pipeline over `items`.
///
/// `config.deterministic_mode` selects the single-threaded schedule. A failing
/// input item stops ingress; everything already accepted drains to the sink,
/// which then receives a terminal error.
pub fn run_pipeline<I, E, S>(
    items: I,
    config: &EngineConfig,
    options: RunOptions,
    sink: &mut S,
) -> Result<PipelineStats, RunError>
where
    I: IntoIterator<Item = Result<StreamItem<f64>, E>>,
    E: Display,
    S: AuditSink + Send + ?Sized,
{
    let config = validate_config(config.clone())?;
    let started = Instant::now();
    let mut stats = PipelineStats::default();
    let outcome = if config.deterministic_mode {
        agents::run_serial(items, &config, options, sink, &mut stats)
    } else {
        agents::run_threaded(items, &config, options, sink, &mut stats)
    };
    stats.elapsed_us = started.elapsed().as_micros() as u64;
    match outcome {
        Ok(()) => Ok(stats),
        Err(e) => Err(e),
    }
}

/// Convenience wrapper collecting everything in memory.
pub fn run_to_memory(
    items: impl IntoIterator<Item = StreamItem<f64>>,
    config: &EngineConfig,
    options: RunOptions,
) -> Result<(MemorySink, PipelineStats), RunError> {
    let mut sink = MemorySink::default();
    let stats = run_pipeline(infallible(items), config, options, &mut sink)?;
    Ok((sink, stats))
}
