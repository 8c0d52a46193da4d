#![allow(dead_code)]

use creditflow::simharness::{generate_stream, DriftSpec, FeatureDistribution, ScenarioSpec};
use creditflow::{ApplicantEvent, EngineConfig, Label, OutcomeEvent, StreamItem};

pub fn app(id: &str, t: i64, features: Vec<f64>) -> StreamItem<f64> {
    StreamItem::Application(ApplicantEvent {
        applicant_id: id.into(),
        event_time_ms: t,
        raw_features: features,
    })
}

pub fn outcome(id: &str, t: i64, label: Label) -> StreamItem<f64> {
    StreamItem::Outcome(OutcomeEvent {
        applicant_id: id.into(),
        outcome_time_ms: t,
        label,
    })
}

/// Four-feature population with heterogeneous scales.
pub fn scenario(n_events: u64, seed: u64, flip_at: Option<u64>) -> ScenarioSpec {
    let coefficients = vec![1.5, -1.0, 0.8, 0.5];
    ScenarioSpec {
        n_events,
        feature_dim: 4,
        true_intercept: -0.4,
        feature_distribution: vec![
            FeatureDistribution {
                mean: 0.0,
                std: 1.0,
            },
            FeatureDistribution {
                mean: 2.0,
                std: 0.5,
            },
            FeatureDistribution {
                mean: -1.0,
                std: 2.0,
            },
            FeatureDistribution {
                mean: 10.0,
                std: 3.0,
            },
        ],
        drift: flip_at.map(|at_event| DriftSpec {
            at_event,
            new_intercept: -0.4,
            new_coefficients: coefficients.iter().map(|c| -c).collect(),
        }),
        true_coefficients: coefficients,
        label_delay_events: 50,
        seed,
    }
}

/// Generated traffic plus malformed, orphaned, early and out-of-order events.
pub fn mixed_stream(n_items: usize, seed: u64) -> Vec<StreamItem<f64>> {
    let mut spec = scenario(n_items as u64, seed, None);
    spec.label_delay_events = 13;
    let mut items = generate_stream(&spec).unwrap().items;
    items.truncate(n_items.saturating_sub(6));
    let t = 10_000_000;
    items.extend([
        app("short", t, vec![1.0, 2.0]),
        app("nan", t, vec![f64::NAN, 0.0, 0.0, 0.0]),
        outcome("nobody", t, Label::Defaulted),
        app("late", t + 10, vec![0.1, 2.0, -1.0, 9.0]),
        app("back-in-time", t, vec![0.1, 2.0, -1.0, 9.0]),
        outcome("late", t, Label::Repaid),
    ]);
    items
}

pub fn config() -> EngineConfig {
    let mut c = EngineConfig::new(4);
    c.metric_window = 50;
    c
}
