use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurements collected over one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    /// Ingress-to-decision latency per decision, microseconds.
    pub latency_us: Vec<u64>,
    pub elapsed_us: u64,
    /// Inbound queue depth high-water mark per agent.
    pub queue_high_water: BTreeMap<String, usize>,
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

impl PipelineStats {
    /// Decisions per second of wall time.
    pub fn throughput(&self) -> f64 {
        if self.elapsed_us == 0 {
            0.0
        } else {
            self.decisions as f64 / (self.elapsed_us as f64 / 1e6)
        }
    }

    pub(crate) fn note_depth(&mut self, agent: &str, depth: usize) {
        let slot = self.queue_high_water.entry(agent.to_string()).or_insert(0);
        *slot = (*slot).max(depth);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
    pub mean_us: f64,
    pub throughput_per_s: f64,
    pub samples: usize,
}

/// Nearest-rank percentile of an ascending slice, `pct` in (0, 100].
pub fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn measure_latency(stats: &PipelineStats) -> Result<LatencySummary> {
    if stats.latency_us.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut sorted = stats.latency_us.clone();
    sorted.sort_unstable();
    let sum: u128 = sorted.iter().map(|&v| u128::from(v)).sum();
    Ok(LatencySummary {
        p50_us: nearest_rank(&sorted, 50.0),
        p99_us: nearest_rank(&sorted, 99.0),
        max_us: *sorted.last().expect("non-empty"),
        mean_us: sum as f64 / sorted.len() as f64,
        throughput_per_s: stats.throughput(),
        samples: sorted.len(),
    })
}
