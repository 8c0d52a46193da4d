use super::{DecisionRecord, FeedbackEvent, MemorySink, RunOptions};
use crate::domain::{validate_config, EngineConfig, ScorerParams, StreamItem};
use crate::error::Result;
use crate::feedback::{FeedbackLearner, PendingDecision};
use crate::ingest::Ingestor;
use crate::policy::{decide, ThresholdState};
use crate::scoring::{assess, ScorerEnsemble};

/// Straight-line executor: ingest, score, decide and learn for each item in
/// stream order, with no queues and no threads.
///
/// This is the behavioral oracle for deterministic-mode [`super::run_pipeline`].
pub fn reference_execute(
    items: impl IntoIterator<Item = StreamItem<f64>>,
    config: &EngineConfig,
    options: RunOptions,
) -> Result<MemorySink> {
    let config = validate_config(config.clone())?;
    let mut params = ScorerParams::initial(&config);
    let mut ensemble = ScorerEnsemble::new(config.ensemble_size, params.clone());
    let mut ingestor = Ingestor::new(config.feature_dim, config.window_capacity);
    let mut threshold = ThresholdState::new(config.tau_init);
    let mut learner = FeedbackLearner::new(&config, params.clone());
    let mut out = MemorySink::default();
    let mut applications = 0u64;

    for (seq, item) in items.into_iter().enumerate() {
        let seq = seq as u64;
        let learn = options.freeze_after.is_none_or(|n| applications < n);
        match item {
            StreamItem::Application(event) => {
                applications += 1;
                let Ok(frame) = ingestor.ingest(&event, &params) else {
                    continue;
                };
                let assessment = assess(&frame, &params, &ensemble, event.event_time_ms)?;
                let decision = decide(assessment.pd, threshold.tau, config.review_band);
                learner.register(PendingDecision {
                    frame,
                    pd: assessment.pd,
                    decision,
                    event_time_ms: event.event_time_ms,
                });
                out.records.push(DecisionRecord {
                    applicant_id: event.applicant_id,
                    ingress_seq: seq,
                    event_time_ms: event.event_time_ms,
                    decision,
                    explanation: assessment.attributions.top_k(config.top_k),
                    assessment,
                    tau_used: threshold.tau,
                    band_used: config.review_band,
                    latency_us: 0,
                });
            }
            StreamItem::Outcome(outcome) => {
                let effect = learner.process_outcome(&outcome, learn);
                if let Some(p) = &effect.published {
                    ensemble.publish(p.clone());
                    params = p.clone();
                }
                if let Some(loss) = effect.loss {
                    threshold.update(loss, config.eta, config.tau_bounds())?;
                }
                if let Some(w) = effect.window {
                    out.feedback.push(FeedbackEvent {
                        seq,
                        window: w.index,
                        metric: w.metric,
                        previous: w.previous,
                        drift: w.drift,
                        published_version: effect.published.as_ref().map(|p| p.version),
                        loss: effect.loss,
                    });
                }
            }
        }
    }
    Ok(out)
}
