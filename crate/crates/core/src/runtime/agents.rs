use std::fmt::Display;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};

use super::{AuditSink, DecisionRecord, FeedbackEvent, PipelineStats, RunError, RunOptions};
use crate::domain::{ApplicantEvent, EngineConfig, OutcomeEvent, ScorerParams, StreamItem};
use crate::feedback::{FeedbackLearner, PendingDecision};
use crate::ingest::{FeatureFrame, Ingestor};
use crate::policy::{decide, ThresholdState};
use crate::scoring::{
    attribute, confidence, probability_of_default, RiskAssessment, ScorerEnsemble,
};

/// Parameters and snapshot ensemble in force when an application entered.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub params: ScorerParams<f64>,
    pub ensemble: ScorerEnsemble<f64>,
}

#[derive(Debug, Clone)]
pub enum AgentMessage {
    Application(ApplicantEvent<f64>),
    Outcome(OutcomeEvent),
    Frame {
        frame: FeatureFrame<f64>,
        model: Arc<ModelSnapshot>,
        event_time_ms: i64,
    },
    Scored {
        frame: FeatureFrame<f64>,
        model: Arc<ModelSnapshot>,
        event_time_ms: i64,
        pd: f64,
        confidence: f64,
    },
    Assessment {
        frame: FeatureFrame<f64>,
        assessment: RiskAssessment<f64>,
        event_time_ms: i64,
    },
    Decided {
        record: DecisionRecord,
        frame: FeatureFrame<f64>,
    },
    Audit(DecisionRecord),
    Closed(FeedbackEvent),
}

/// A message plus its ingress metadata.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub seq: u64,
    pub ingress: Instant,
    /// False once the run is frozen (baseline mode).
    pub learn: bool,
    pub msg: AgentMessage,
}

impl Envelope {
    fn with(self, msg: AgentMessage) -> Self {
        Self { msg, ..self }
    }
}

/// A sequential reactor over one ordered inbound queue.
pub(crate) trait Agent: Send {
    fn name(&self) -> &'static str;
    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>);
    fn report(&self, _stats: &mut PipelineStats) {}
}

struct AcquisitionAgent {
    ingestor: Ingestor<f64>,
    model: Arc<ModelSnapshot>,
    params_rx: Receiver<ScorerParams<f64>>,
    applications: u64,
    outcomes: u64,
    skipped: u64,
}

impl AcquisitionAgent {
    fn absorb_snapshots(&mut self) {
        while let Ok(params) = self.params_rx.try_recv() {
            let mut ensemble = self.model.ensemble.clone();
            ensemble.publish(params.clone());
            self.model = Arc::new(ModelSnapshot { params, ensemble });
        }
    }
}

impl Agent for AcquisitionAgent {
    fn name(&self) -> &'static str {
        "acquisition"
    }

    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>) {
        self.absorb_snapshots();
        match env.msg {
            AgentMessage::Application(ref event) => {
                self.applications += 1;
                match self.ingestor.ingest(event, &self.model.params) {
                    Ok(frame) => {
                        let msg = AgentMessage::Frame {
                            frame,
                            model: Arc::clone(&self.model),
                            event_time_ms: event.event_time_ms,
                        };
                        out.push(env.with(msg));
                    }
                    Err(_) => self.skipped += 1,
                }
            }
            AgentMessage::Outcome(_) => {
                self.outcomes += 1;
                out.push(env);
            }
            _ => out.push(env),
        }
    }

    fn report(&self, stats: &mut PipelineStats) {
        stats.applications += self.applications;
        stats.outcomes += self.outcomes;
        stats.skipped_events += self.skipped;
    }
}

struct ScoringAgent;

impl Agent for ScoringAgent {
    fn name(&self) -> &'static str {
        "scoring"
    }

    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>) {
        match env.msg {
            AgentMessage::Frame {
                frame,
                model,
                event_time_ms,
            } => {
                let pd = probability_of_default(&frame, &model.params)
                    .expect("frame synthesized from this snapshot");
                let confidence =
                    confidence(&frame, &model.ensemble).expect("ensemble matches frame dim");
                let msg = AgentMessage::Scored {
                    frame,
                    model,
                    event_time_ms,
                    pd,
                    confidence,
                };
                out.push(Envelope { msg, ..env });
            }
            msg => out.push(Envelope { msg, ..env }),
        }
    }
}

struct ExplainAgent;

impl Agent for ExplainAgent {
    fn name(&self) -> &'static str {
        "explanation"
    }

    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>) {
        match env.msg {
            AgentMessage::Scored {
                frame,
                model,
                event_time_ms,
                pd,
                confidence,
            } => {
                let attributions =
                    attribute(&frame, &model.params).expect("frame synthesized from this snapshot");
                let assessment = RiskAssessment {
                    applicant_id: frame.applicant_id.clone(),
                    pd,
                    confidence,
                    attributions,
                    params_version: model.params.version,
                    scored_at_ms: event_time_ms,
                };
                let msg = AgentMessage::Assessment {
                    frame,
                    assessment,
                    event_time_ms,
                };
                out.push(Envelope { msg, ..env });
            }
            msg => out.push(Envelope { msg, ..env }),
        }
    }
}

struct DecisionAgent {
    threshold: ThresholdState<f64>,
    loss_rx: Receiver<f64>,
    eta: f64,
    bounds: (f64, f64),
    band: f64,
    top_k: usize,
    stamp_latency: bool,
    latency_us: Vec<u64>,
}

impl Agent for DecisionAgent {
    fn name(&self) -> &'static str {
        "decision"
    }

    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>) {
        while let Ok(loss) = self.loss_rx.try_recv() {
            self.threshold
                .update(loss, self.eta, self.bounds)
                .expect("window loss is a fraction");
        }
        match env.msg {
            AgentMessage::Assessment {
                frame,
                assessment,
                event_time_ms,
            } => {
                let tau = self.threshold.tau;
                let decision = decide(assessment.pd, tau, self.band);
                let latency = env.ingress.elapsed().as_micros() as u64;
                self.latency_us.push(latency);
                let record = DecisionRecord {
                    applicant_id: assessment.applicant_id.clone(),
                    ingress_seq: env.seq,
                    event_time_ms,
                    decision,
                    explanation: assessment.attributions.top_k(self.top_k),
                    assessment,
                    tau_used: tau,
                    band_used: self.band,
                    latency_us: if self.stamp_latency { latency } else { 0 },
                };
                out.push(Envelope {
                    msg: AgentMessage::Decided { record, frame },
                    ..env
                });
            }
            msg => out.push(Envelope { msg, ..env }),
        }
    }

    fn report(&self, stats: &mut PipelineStats) {
        stats.decisions += self.latency_us.len() as u64;
        stats.latency_us.extend_from_slice(&self.latency_us);
    }
}

struct FeedbackAgent {
    learner: FeedbackLearner<f64>,
    params_tx: Sender<ScorerParams<f64>>,
    loss_tx: Sender<f64>,
    windows: u64,
}

impl Agent for FeedbackAgent {
    fn name(&self) -> &'static str {
        "feedback"
    }

    fn handle(&mut self, env: Envelope, out: &mut Vec<Envelope>) {
        match env.msg {
            AgentMessage::Decided { record, frame } => {
                self.learner.register(PendingDecision {
                    frame,
                    pd: record.assessment.pd,
                    decision: record.decision,
                    event_time_ms: record.event_time_ms,
                });
                out.push(Envelope {
                    msg: AgentMessage::Audit(record),
                    ..env
                });
            }
            AgentMessage::Outcome(ref outcome) => {
                let effect = self.learner.process_outcome(outcome, env.learn);
                if let Some(params) = &effect.published {
                    // receivers live as long as the run
                    let _ = self.params_tx.send(params.clone());
                }
                if let Some(loss) = effect.loss {
                    let _ = self.loss_tx.send(loss);
                }
                if let Some(w) = effect.window {
                    self.windows += 1;
                    let event = FeedbackEvent {
                        seq: env.seq,
                        window: w.index,
                        metric: w.metric,
                        previous: w.previous,
                        drift: w.drift,
                        published_version: effect.published.as_ref().map(|p| p.version),
                        loss: effect.loss,
                    };
                    out.push(env.with(AgentMessage::Closed(event)));
                }
            }
            msg => out.push(Envelope { msg, ..env }),
        }
    }

    fn report(&self, stats: &mut PipelineStats) {
        let c = self.learner.counters();
        stats.orphan_outcomes += c.orphan_outcomes;
        stats.early_outcomes += c.early_outcomes;
        stats.drift_flags += c.drift_flags;
        stats.published_snapshots += c.published;
        stats.evicted_pending += self.learner.buffer().evicted();
        stats.windows_closed += self.windows;
    }
}

struct Crew {
    acquisition: AcquisitionAgent,
    scoring: Vec<ScoringAgent>,
    explain: ExplainAgent,
    decision: DecisionAgent,
    feedback: FeedbackAgent,
}

fn assemble(config: &EngineConfig, shards: usize, stamp_latency: bool) -> Crew {
    let initial = ScorerParams::initial(config);
    let (params_tx, params_rx) = unbounded();
    let (loss_tx, loss_rx) = unbounded();
    Crew {
        acquisition: AcquisitionAgent {
            ingestor: Ingestor::new(config.feature_dim, config.window_capacity),
            model: Arc::new(ModelSnapshot {
                ensemble: ScorerEnsemble::new(config.ensemble_size, initial.clone()),
                params: initial.clone(),
            }),
            params_rx,
            applications: 0,
            outcomes: 0,
            skipped: 0,
        },
        scoring: (0..shards).map(|_| ScoringAgent).collect(),
        explain: ExplainAgent,
        decision: DecisionAgent {
            threshold: ThresholdState::new(config.tau_init),
            loss_rx,
            eta: config.eta,
            bounds: config.tau_bounds(),
            band: config.review_band,
            top_k: config.top_k,
            stamp_latency,
            latency_us: Vec::new(),
        },
        feedback: FeedbackAgent {
            learner: FeedbackLearner::new(config, initial),
            params_tx,
            loss_tx,
            windows: 0,
        },
    }
}

/// Stamps ingress metadata on stream items.
struct Ingress {
    seq: u64,
    applications: u64,
    freeze_after: Option<u64>,
}

impl Ingress {
    fn new(options: RunOptions) -> Self {
        Self {
            seq: 0,
            applications: 0,
            freeze_after: options.freeze_after,
        }
    }

    fn stamp(&mut self, item: StreamItem<f64>) -> Envelope {
        let learn = self.freeze_after.is_none_or(|n| self.applications < n);
        let msg = match item {
            StreamItem::Application(e) => {
                self.applications += 1;
                AgentMessage::Application(e)
            }
            StreamItem::Outcome(o) => AgentMessage::Outcome(o),
        };
        let env = Envelope {
            seq: self.seq,
            ingress: Instant::now(),
            learn,
            msg,
        };
        self.seq += 1;
        env
    }
}

fn deliver<S: AuditSink + ?Sized>(sink: &mut S, env: Envelope) -> std::io::Result<()> {
    match env.msg {
        AgentMessage::Audit(record) => sink.record(&record),
        AgentMessage::Closed(event) => sink.feedback(&event),
        _ => Ok(()),
    }
}

pub(crate) fn run_serial<I, E, S>(
    items: I,
    config: &EngineConfig,
    options: RunOptions,
    sink: &mut S,
    stats: &mut PipelineStats,
) -> Result<(), RunError>
where
    I: IntoIterator<Item = Result<StreamItem<f64>, E>>,
    E: Display,
    S: AuditSink + ?Sized,
{
    let crew = assemble(config, 1, false);
    let mut stages: Vec<Box<dyn Agent>> = vec![Box::new(crew.acquisition)];
    for s in crew.scoring {
        stages.push(Box::new(s));
    }
    stages.push(Box::new(crew.explain));
    stages.push(Box::new(crew.decision));
    stages.push(Box::new(crew.feedback));

    let mut ingress = Ingress::new(options);
    let mut queue = Vec::new();
    let mut next = Vec::new();
    let mut failure = None;
    for item in items {
        let item = match item {
            Ok(item) => item,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        queue.push(ingress.stamp(item));
        for stage in stages.iter_mut() {
            stats.note_depth(stage.name(), queue.len());
            for env in queue.drain(..) {
                stage.handle(env, &mut next);
            }
            std::mem::swap(&mut queue, &mut next);
        }
        for env in queue.drain(..) {
            deliver(sink, env)?;
        }
    }
    for stage in &stages {
        stage.report(stats);
    }
    finish(sink, failure, ingress.seq)
}

fn finish<S: AuditSink + ?Sized>(
    sink: &mut S,
    failure: Option<String>,
    accepted: u64,
) -> Result<(), RunError> {
    match failure {
        None => Ok(()),
        Some(message) => {
            sink.terminal_error(&message)?;
            Err(RunError::Stream { accepted, message })
        }
    }
}

fn shard_of(id: &str, shards: usize) -> usize {
    // FNV-1a, stable across runs and platforms
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % shards as u64) as usize
}

fn route(env: &Envelope, shards: usize) -> usize {
    if shards == 1 {
        return 0;
    }
    match &env.msg {
        AgentMessage::Frame { frame, .. } => shard_of(&frame.applicant_id, shards),
        AgentMessage::Outcome(o) => shard_of(&o.applicant_id, shards),
        _ => 0,
    }
}

/// Runs one agent until its inbound queue closes. Returns the agent and the
/// inbound queue high-water mark.
fn stage_loop<A: Agent + ?Sized>(
    agent: &mut A,
    rx: Receiver<Envelope>,
    outs: Vec<Sender<Envelope>>,
    shards: usize,
) -> usize {
    let mut high_water = 0;
    let mut buf = Vec::new();
    for env in rx.iter() {
        high_water = high_water.max(rx.len() + 1);
        agent.handle(env, &mut buf);
        for out in buf.drain(..) {
            let lane = if outs.len() > 1 {
                route(&out, shards)
            } else {
                0
            };
            if outs[lane].send(out).is_err() {
                return high_water;
            }
        }
    }
    high_water
}

pub(crate) fn run_threaded<I, E, S>(
    items: I,
    config: &EngineConfig,
    options: RunOptions,
    sink: &mut S,
    stats: &mut PipelineStats,
) -> Result<(), RunError>
where
    I: IntoIterator<Item = Result<StreamItem<f64>, E>>,
    E: Display,
    S: AuditSink + Send + ?Sized,
{
    let shards = config.scoring_shards;
    let cap = config.queue_capacity;
    let Crew {
        mut acquisition,
        mut scoring,
        mut explain,
        mut decision,
        mut feedback,
    } = assemble(config, shards, true);

    let (in_tx, in_rx) = bounded::<Envelope>(cap);
    let (shard_txs, shard_rxs): (Vec<_>, Vec<_>) = (0..shards).map(|_| bounded(cap)).unzip();
    let (ex_tx, ex_rx) = bounded(cap);
    let (dec_tx, dec_rx) = bounded(cap);
    let (fb_tx, fb_rx) = bounded(cap);
    let (sink_tx, sink_rx) = bounded::<Envelope>(cap);

    let mut ingress = Ingress::new(options);
    let mut failure = None;
    let sink_result = thread::scope(|s| {
        let acq = s.spawn(|| stage_loop(&mut acquisition, in_rx, shard_txs, shards));
        let scorers: Vec<_> = scoring
            .iter_mut()
            .zip(shard_rxs)
            .map(|(agent, rx)| {
                let tx = ex_tx.clone();
                s.spawn(move || stage_loop(agent, rx, vec![tx], 1))
            })
            .collect();
        drop(ex_tx);
        let exp = s.spawn(|| stage_loop(&mut explain, ex_rx, vec![dec_tx], 1));
        let dec = s.spawn(|| stage_loop(&mut decision, dec_rx, vec![fb_tx], 1));
        let fb = s.spawn(|| stage_loop(&mut feedback, fb_rx, vec![sink_tx], 1));
        let collector = s.spawn(|| {
            let mut first_err = None;
            let mut high_water = 0;
            for env in sink_rx.iter() {
                high_water = high_water.max(sink_rx.len() + 1);
                if first_err.is_none() {
                    if let Err(e) = deliver(sink, env) {
                        first_err = Some(e);
                    }
                }
            }
            (first_err, high_water)
        });

        for item in items {
            match item {
                Ok(item) => {
                    if in_tx.send(ingress.stamp(item)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        drop(in_tx);

        stats.note_depth(
            "acquisition",
            acq.join().expect("acquisition agent panicked"),
        );
        for h in scorers {
            stats.note_depth("scoring", h.join().expect("scoring agent panicked"));
        }
        stats.note_depth(
            "explanation",
            exp.join().expect("explanation agent panicked"),
        );
        stats.note_depth("decision", dec.join().expect("decision agent panicked"));
        stats.note_depth("feedback", fb.join().expect("feedback agent panicked"));
        let (err, hw) = collector.join().expect("audit collector panicked");
        stats.note_depth("sink", hw);
        err
    });

    acquisition.report(stats);
    for s in &scoring {
        s.report(stats);
    }
    explain.report(stats);
    decision.report(stats);
    feedback.report(stats);
    if let Some(e) = sink_result {
        return Err(RunError::Sink(e));
    }
    finish(sink, failure, ingress.seq)
}
