//! Feedback learning: joins delayed outcomes to decisions, tracks the windowed
//! log-loss for drift detection, applies online gradient updates and publishes
//! versioned parameter snapshots.

use std::collections::{HashMap, VecDeque};

use crate::domain::{EngineConfig, Label, OutcomeEvent, ScorerParams};
use crate::error::{Error, Result};
use crate::ingest::{synthesize_features, FeatureFrame};
use crate::policy::Decision;
use crate::scalar::Scalar;
use crate::scoring::probability_of_default;

/// Mean binary cross-entropy with probabilities clipped to `[eps, 1 − eps]`.
pub fn rolling_metric<T: Scalar>(window: &[(T, Label)], clip_eps: T) -> Result<T> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let hi = T::one() - clip_eps;
    let total = window.iter().fold(T::zero(), |acc, &(pd, label)| {
        let p = pd.max(clip_eps).min(hi);
        let ll = if label.is_default() {
            p.ln()
        } else {
            (T::one() - p).ln()
        };
        acc - ll
    });
    Ok(total / T::lit(window.len() as f64))
}

/// `|m_curr − m_prev| > gamma`, strictly.
pub fn detect_drift<T: Scalar>(m_curr: T, m_prev: T, gamma: T) -> bool {
    (m_curr - m_prev).abs() > gamma
}

/// One gradient step on the log-loss of `label` under `params`.
///
/// The frame is re-synthesized from its normalized features under `params`, so
/// the step is taken at the current weights even when the frame was built from
/// an older snapshot. The fusion coefficients are left untouched and the
/// version is unchanged; versions are assigned on publication.
pub fn sgd_update<T: Scalar>(
    params: &ScorerParams<T>,
    frame: &FeatureFrame<T>,
    label: Label,
    lr: T,
) -> Result<ScorerParams<T>> {
    let current = synthesize_features(&frame.applicant_id, frame.normalized.clone(), params)?;
    let pd = probability_of_default(&current, params)?;
    let step = lr * (pd - label.target::<T>());

    let mut next = params.clone();
    next.intercept = params.intercept - step;
    next.fusion_gain = params.fusion_gain - step * current.fusion;
    for i in 0..params.dim() {
        next.coefficients[i] = params.coefficients[i] - step * current.weighted[i];
        next.feature_weights[i] =
            params.feature_weights[i] - step * params.coefficients[i] * current.normalized[i];
    }
    Ok(next)
}

/// Default rate among approved applicants; `None` when nothing was approved.
pub fn window_loss<T: Scalar>(entries: &[(Decision, Label)]) -> Option<T> {
    let (approved, defaulted) = entries
        .iter()
        .filter(|(d, _)| *d == Decision::Approve)
        .fold((0usize, 0usize), |(a, d), (_, l)| {
            (a + 1, d + usize::from(l.is_default()))
        });
    (approved > 0).then(|| T::lit(defaulted as f64) / T::lit(approved as f64))
}

/// A decision waiting for its repayment outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingDecision<T> {
    pub frame: FeatureFrame<T>,
    pub pd: T,
    pub decision: Decision,
    pub event_time_ms: i64,
}

/// Capacity-bounded map of pending decisions with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct LabelJoinBuffer<T> {
    capacity: usize,
    pending: HashMap<String, (u64, PendingDecision<T>)>,
    order: VecDeque<(u64, String)>,
    next_ticket: u64,
    evicted: u64,
}

impl<T: Scalar> LabelJoinBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "join buffer capacity must be >= 1");
        Self {
            capacity,
            pending: HashMap::new(),
            order: VecDeque::new(),
            next_ticket: 0,
            evicted: 0,
        }
    }

    /// Inserts a pending decision. A pending entry with the same applicant id
    /// is replaced and counted as evicted.
    pub fn insert(&mut self, entry: PendingDecision<T>) {
        let id = entry.frame.applicant_id.clone();
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        if self.pending.insert(id.clone(), (ticket, entry)).is_some() {
            self.evicted += 1;
        }
        self.order.push_back((ticket, id));
        while self.pending.len() > self.capacity {
            self.evict_oldest();
        }
        // drop stale order entries so the queue stays proportional to the map
        if self.order.len() > 2 * self.capacity + 16 {
            let pending = &self.pending;
            self.order
                .retain(|(t, id)| pending.get(id).is_some_and(|(live, _)| live == t));
        }
    }

    fn evict_oldest(&mut self) {
        while let Some((ticket, id)) = self.order.pop_front() {
            if self.pending.get(&id).is_some_and(|(t, _)| *t == ticket) {
                self.pending.remove(&id);
                self.evicted += 1;
                return;
            }
        }
    }

    /// Removes and returns the pending entry for `applicant_id`.
    pub fn take(&mut self, applicant_id: &str) -> Option<PendingDecision<T>> {
        self.pending.remove(applicant_id).map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }
}

/// Summary of one completed tumbling metric window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary<T> {
    pub index: u64,
    pub metric: T,
    pub previous: Option<T>,
    pub drift: bool,
}

/// Tumbling-window log-loss tracker with the jump trigger.
#[derive(Debug, Clone)]
pub struct DriftMonitor<T> {
    size: usize,
    window: Vec<(T, Label)>,
    m_prev: Option<T>,
    m_curr: Option<T>,
    gamma: T,
    clip_eps: T,
    completed: u64,
}

impl<T: Scalar> DriftMonitor<T> {
    pub fn new(size: usize, gamma: T, clip_eps: T) -> Self {
        assert!(size >= 1, "metric window must be >= 1");
        Self {
            size,
            window: Vec::with_capacity(size),
            m_prev: None,
            m_curr: None,
            gamma,
            clip_eps,
            completed: 0,
        }
    }

    /// Adds one labeled prediction. Returns the window summary when this
    /// observation completes a window.
    pub fn observe(&mut self, pd: T, label: Label) -> Option<WindowSummary<T>> {
        self.window.push((pd, label));
        if self.window.len() < self.size {
            return None;
        }
        let metric = rolling_metric(&self.window, self.clip_eps).expect("window is full");
        self.window.clear();
        self.m_prev = self.m_curr;
        self.m_curr = Some(metric);
        let summary = WindowSummary {
            index: self.completed,
            metric,
            previous: self.m_prev,
            drift: self
                .m_prev
                .is_some_and(|prev| detect_drift(metric, prev, self.gamma)),
        };
        self.completed += 1;
        Some(summary)
    }

    pub fn pending(&self) -> usize {
        self.window.len()
    }

    pub fn current(&self) -> Option<T> {
        self.m_curr
    }

    pub fn previous(&self) -> Option<T> {
        self.m_prev
    }

    pub fn completed_windows(&self) -> u64 {
        self.completed
    }
}

/// Learner parameters and the ring of published snapshots.
#[derive(Debug, Clone)]
pub struct LearningState<T> {
    pub current: ScorerParams<T>,
    pub learning_rate: T,
    pub drift_boost_factor: T,
    boosted: bool,
    snapshots: VecDeque<ScorerParams<T>>,
    ensemble_size: usize,
}

impl<T: Scalar> LearningState<T> {
    pub fn new(
        initial: ScorerParams<T>,
        learning_rate: T,
        drift_boost_factor: T,
        ensemble_size: usize,
    ) -> Self {
        Self {
            snapshots: std::iter::repeat_n(initial.clone(), ensemble_size).collect(),
            current: initial,
            learning_rate,
            drift_boost_factor,
            boosted: false,
            ensemble_size,
        }
    }

    /// Step size for the current window.
    pub fn effective_rate(&self) -> T {
        if self.boosted {
            self.learning_rate * self.drift_boost_factor
        } else {
            self.learning_rate
        }
    }

    pub fn is_boosted(&self) -> bool {
        self.boosted
    }

    /// Stamps the current parameters with the next version and records them.
    fn publish(&mut self) -> ScorerParams<T> {
        self.current.version += 1;
        let snap = self.current.clone();
        self.snapshots.push_front(snap.clone());
        self.snapshots.truncate(self.ensemble_size);
        snap
    }

    /// Published snapshots, newest first.
    pub fn snapshots(&self) -> impl Iterator<Item = &ScorerParams<T>> {
        self.snapshots.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeedbackCounters {
    pub joined: u64,
    pub orphan_outcomes: u64,
    pub early_outcomes: u64,
    pub drift_flags: u64,
    pub published: u64,
}

/// Everything one outcome caused.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeEffect<T> {
    pub joined: bool,
    pub window: Option<WindowSummary<T>>,
    pub published: Option<ScorerParams<T>>,
    pub loss: Option<T>,
}

impl<T> OutcomeEffect<T> {
    fn dropped() -> Self {
        Self {
            joined: false,
            window: None,
            published: None,
            loss: None,
        }
    }
}

/// The feedback stage state machine.
#[derive(Debug, Clone)]
pub struct FeedbackLearner<T> {
    learning: LearningState<T>,
    monitor: DriftMonitor<T>,
    buffer: LabelJoinBuffer<T>,
    outcomes: Vec<(Decision, Label)>,
    counters: FeedbackCounters,
}

impl<T: Scalar> FeedbackLearner<T> {
    pub fn new(config: &EngineConfig, initial: ScorerParams<T>) -> Self {
        Self {
            learning: LearningState::new(
                initial,
                T::lit(config.learning_rate),
                T::lit(config.drift_boost_factor),
                config.ensemble_size,
            ),
            monitor: DriftMonitor::new(
                config.metric_window,
                T::lit(config.gamma),
                T::lit(config.pd_clip_epsilon),
            ),
            buffer: LabelJoinBuffer::new(config.join_capacity),
            outcomes: Vec::with_capacity(config.metric_window),
            counters: FeedbackCounters::default(),
        }
    }

    pub fn register(&mut self, pending: PendingDecision<T>) {
        self.buffer.insert(pending);
    }

    /// Joins an outcome to its decision and applies its effects.
    ///
    /// With `learn == false` the outcome still feeds the metric windows but
    /// parameters, learning rate, snapshots and losses are left alone.
    pub fn process_outcome(&mut self, outcome: &OutcomeEvent, learn: bool) -> OutcomeEffect<T> {
        let Some(pending) = self.buffer.take(&outcome.applicant_id) else {
            self.counters.orphan_outcomes += 1;
            return OutcomeEffect::dropped();
        };
        if outcome.outcome_time_ms < pending.event_time_ms {
            self.counters.early_outcomes += 1;
            return OutcomeEffect::dropped();
        }
        self.counters.joined += 1;

        if learn {
            let lr = self.learning.effective_rate();
            self.learning.current =
                sgd_update(&self.learning.current, &pending.frame, outcome.label, lr)
                    .expect("pending frame matches learner dimension");
        }
        self.outcomes.push((pending.decision, outcome.label));

        let mut effect = OutcomeEffect {
            joined: true,
            window: self.monitor.observe(pending.pd, outcome.label),
            published: None,
            loss: None,
        };
        if let Some(summary) = effect.window {
            if summary.drift {
                self.counters.drift_flags += 1;
            }
            if learn {
                self.learning.boosted = summary.drift;
                effect.published = Some(self.learning.publish());
                self.counters.published += 1;
                effect.loss = window_loss(&self.outcomes);
            }
            self.outcomes.clear();
        }
        effect
    }

    pub fn params(&self) -> &ScorerParams<T> {
        &self.learning.current
    }

    pub fn learning(&self) -> &LearningState<T> {
        &self.learning
    }

    pub fn monitor(&self) -> &DriftMonitor<T> {
        &self.monitor
    }

    pub fn buffer(&self) -> &LabelJoinBuffer<T> {
        &self.buffer
    }

    pub fn counters(&self) -> FeedbackCounters {
        self.counters
    }
}
