//! Data acquisition: running normalization statistics, the event-time window,
//! and feature synthesis.

use std::collections::VecDeque;

use crate::domain::{check_features, ApplicantEvent, ScorerParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-feature running population statistics (Welford recurrence).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }

    pub fn push(&mut self, x: T) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::lit(self.count as f64);
        let m2 = self.m2 + delta * (x - self.mean);
        self.m2 = if m2 > T::zero() { m2 } else { T::zero() };
    }

    /// Functional form of [`RunningStats::push`].
    pub fn updated(mut self, x: T) -> Self {
        self.push(x);
        self
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn m2(&self) -> T {
        self.m2
    }

    /// Population variance, `m2 / count`; zero when empty.
    pub fn variance(&self) -> T {
        if self.count == 0 {
            T::zero()
        } else {
            self.m2 / T::lit(self.count as f64)
        }
    }

    pub fn std_dev(&self) -> T {
        self.variance().sqrt()
    }
}

/// `(x - mean) / std_dev`, or `0` when fewer than two values have been seen or
/// the spread is zero.
pub fn normalize<T: Scalar>(x: T, stats: &RunningStats<T>) -> T {
    let sd = stats.std_dev();
    if stats.count() < 2 || sd <= T::zero() {
        return T::zero();
    }
    (x - stats.mean()) / sd
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowEntry {
    pub event_time_ms: i64,
    pub applicant_id: String,
}

/// Count-capped FIFO of recent events in event-time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamWindow {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
    last_event_time_ms: Option<i64>,
}

impl StreamWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(4096)),
            last_event_time_ms: None,
        }
    }

    /// Appends an event and returns the time advance `Δt` (0 on the first event).
    /// Oldest entries are evicted once capacity is exceeded.
    pub fn advance(&mut self, event_time_ms: i64, applicant_id: &str) -> Result<i64> {
        let delta = match self.last_event_time_ms {
            Some(last) if event_time_ms < last => {
                return Err(Error::OutOfOrderEvent {
                    event_time_ms,
                    last_event_time_ms: last,
                })
            }
            Some(last) => event_time_ms - last,
            None => 0,
        };
        self.last_event_time_ms = Some(event_time_ms);
        self.entries.push_back(WindowEntry {
            event_time_ms,
            applicant_id: applicant_id.to_string(),
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(delta)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last_event_time_ms(&self) -> Option<i64> {
        self.last_event_time_ms
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// Event-time span covered by the window.
    pub fn span_ms(&self) -> i64 {
        match (self.entries.front(), self.entries.back()) {
            (Some(a), Some(b)) => b.event_time_ms - a.event_time_ms,
            _ => 0,
        }
    }
}

/// Normalized, weighted and fused features for one applicant.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame<T> {
    pub applicant_id: String,
    pub normalized: Vec<T>,
    pub weighted: Vec<T>,
    pub fusion: T,
    pub params_version: u64,
}

/// Applies the importance weights and the quadratic fusion term.
pub fn synthesize_features<T: Scalar>(
    applicant_id: &str,
    normalized: Vec<T>,
    params: &ScorerParams<T>,
) -> Result<FeatureFrame<T>> {
    params.check_dim(normalized.len())?;
    let weighted = normalized
        .iter()
        .zip(&params.feature_weights)
        .map(|(&f, &w)| w * f)
        .collect();
    let fusion = normalized
        .iter()
        .zip(&params.fusion_coefficients)
        .fold(T::zero(), |acc, (&f, &a)| acc + a * f * f);
    Ok(FeatureFrame {
        applicant_id: applicant_id.to_string(),
        normalized,
        weighted,
        fusion,
        params_version: params.version,
    })
}

/// Acquisition-stage state: per-feature statistics and the stream window.
///
/// Each event is normalized against the statistics of the events before it and
/// then folded in, so the first two events of a stream normalize to zero.
#[derive(Debug, Clone)]
pub struct Ingestor<T> {
    stats: Vec<RunningStats<T>>,
    window: StreamWindow,
}

impl<T: Scalar> Ingestor<T> {
    pub fn new(feature_dim: usize, window_capacity: usize) -> Self {
        Self {
            stats: vec![RunningStats::new(); feature_dim],
            window: StreamWindow::new(window_capacity),
        }
    }

    pub fn ingest(
        &mut self,
        event: &ApplicantEvent<T>,
        params: &ScorerParams<T>,
    ) -> Result<FeatureFrame<T>> {
        check_features(&event.raw_features, self.stats.len())?;
        params.check_dim(self.stats.len())?;
        self.window
            .advance(event.event_time_ms, &event.applicant_id)?;
        let normalized = event
            .raw_features
            .iter()
            .zip(&mut self.stats)
            .map(|(&x, stats)| {
                let z = normalize(x, stats);
                stats.push(x);
                z
            })
            .collect();
        synthesize_features(&event.applicant_id, normalized, params)
    }

    pub fn stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn window(&self) -> &StreamWindow {
        &self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch_mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    fn feed(xs: &[f64]) -> RunningStats<f64> {
        xs.iter().fold(RunningStats::new(), |s, &x| s.updated(x))
    }

    #[test]
    fn welford_matches_batch_on_small_sequence() {
        let s = feed(&[1.0, 2.0, 3.0]);
        let (m, v) = batch_mean_var(&[1.0, 2.0, 3.0]);
        assert!((s.mean() - 2.0).abs() < 1e-12 && (m - 2.0).abs() < 1e-12);
        assert!((s.variance() - 2.0 / 3.0).abs() < 1e-9);
        assert!((v - s.variance()).abs() < 1e-12);
    }

    #[test]
    fn single_and_constant_sequences_have_zero_variance() {
        let s = feed(&[5.0]);
        assert_eq!((s.mean(), s.variance()), (5.0, 0.0));
        for c in [-3.7, 0.0, 1e8, 0.1] {
            assert_eq!(feed(&[c, c, c]).variance(), 0.0);
        }
        let empty = RunningStats::<f64>::new();
        assert_eq!((empty.count(), empty.mean(), empty.m2()), (0, 0.0, 0.0));
    }

    #[test]
    fn normalize_cases() {
        // mean 4, population sd 2
        let s = feed(&[2.0, 6.0]);
        assert_eq!((s.mean(), s.std_dev()), (4.0, 2.0));
        assert_eq!(normalize(6.0, &s), 1.0);
        assert_eq!(normalize(4.0, &s), 0.0);
        assert_eq!(normalize(9.0, &feed(&[3.0, 3.0, 3.0])), 0.0);
        assert_eq!(normalize(9.0, &feed(&[3.0])), 0.0);
    }

    #[test]
    fn window_evicts_fifo() {
        let mut w = StreamWindow::new(3);
        assert_eq!(w.advance(1, "a").unwrap(), 0);
        w.advance(2, "b").unwrap();
        w.advance(3, "c").unwrap();
        assert_eq!(w.advance(7, "d").unwrap(), 4);
        let ids: Vec<_> = w.entries().map(|e| e.applicant_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "d"]);
        assert_eq!(w.last_event_time_ms(), Some(7));
        assert_eq!(w.span_ms(), 5);
    }

    #[test]
    fn window_rejects_out_of_order() {
        let mut w = StreamWindow::new(3);
        w.advance(10, "a").unwrap();
        assert_eq!(
            w.advance(9, "b"),
            Err(Error::OutOfOrderEvent {
                event_time_ms: 9,
                last_event_time_ms: 10
            })
        );
        assert_eq!(w.len(), 1);
        // equal timestamps are allowed
        assert_eq!(w.advance(10, "c"), Ok(0));
    }

    fn params(w: Vec<f64>, a: Vec<f64>) -> ScorerParams<f64> {
        let mut p = ScorerParams::neutral(w.len());
        p.feature_weights = w;
        p.fusion_coefficients = a;
        p
    }

    #[test]
    fn synthesis_examples() {
        let f = synthesize_features(
            "x",
            vec![0.5, -0.5],
            &params(vec![1.0, 1.0], vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!((f.weighted.clone(), f.fusion), (vec![0.5, -0.5], 0.0));

        let f = synthesize_features("x", vec![3.0, 7.0], &params(vec![2.0, 0.0], vec![0.0, 0.0]))
            .unwrap();
        assert_eq!((f.weighted.clone(), f.fusion), (vec![6.0, 0.0], 0.0));

        let f = synthesize_features("x", vec![0.3, 0.4], &params(vec![0.0, 0.0], vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(f.weighted, vec![0.0, 0.0]);
        assert!((f.fusion - 0.25).abs() < 1e-15);

        assert!(matches!(
            synthesize_features("x", vec![1.0], &params(vec![1.0, 1.0], vec![0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ingestor_cold_start_normalizes_to_zero() {
        let p = ScorerParams::<f64>::neutral(1);
        let mut ing = Ingestor::new(1, 8);
        let ev = |t, x| ApplicantEvent {
            applicant_id: format!("a{t}"),
            event_time_ms: t,
            raw_features: vec![x],
        };
        assert_eq!(ing.ingest(&ev(1, 10.0), &p).unwrap().normalized, vec![0.0]);
        assert_eq!(ing.ingest(&ev(2, 20.0), &p).unwrap().normalized, vec![0.0]);
        // prior stats: mean 15, sd 5
        assert_eq!(ing.ingest(&ev(3, 25.0), &p).unwrap().normalized, vec![2.0]);
        assert!(ing.ingest(&ev(2, 1.0), &p).is_err());
        assert_eq!(ing.stats()[0].count(), 3);
    }

    #[test]
    fn generic_over_f32() {
        let s: RunningStats<f32> = [1.0f32, 2.0, 3.0]
            .iter()
            .fold(RunningStats::new(), |s, &x| s.updated(x));
        assert!((s.variance() - 2.0 / 3.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn streaming_matches_batch(xs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let s = feed(&xs);
            let (m, v) = batch_mean_var(&xs);
            let tol = |b: f64| 1e-9 * b.abs().max(1.0);
            prop_assert!((s.mean() - m).abs() <= tol(m));
            prop_assert!((s.variance() - v).abs() <= tol(v));
            prop_assert!(s.m2() >= 0.0);
        }

        #[test]
        fn fusion_nonnegative_for_nonnegative_alpha(
            f in proptest::collection::vec(-10.0f64..10.0, 1..8),
            seed_a in proptest::collection::vec(0.0f64..5.0, 8),
        ) {
            let n = f.len();
            let p = params(vec![1.0; n], seed_a[..n].to_vec());
            prop_assert!(synthesize_features("x", f, &p).unwrap().fusion >= 0.0);
        }

        #[test]
        fn window_never_exceeds_capacity(
            cap in 1usize..6,
            steps in proptest::collection::vec(0i64..5, 0..40),
        ) {
            let mut w = StreamWindow::new(cap);
            let mut t = 0;
            for (i, dt) in steps.into_iter().enumerate() {
                t += dt;
                w.advance(t, &i.to_string()).unwrap();
                prop_assert!(w.len() <= cap);
                let times: Vec<_> = w.entries().map(|e| e.event_time_ms).collect();
                prop_assert!(times.windows(2).all(|p| p[0] <= p[1]));
                prop_assert_eq!(w.last_event_time_ms(), Some(t));
            }
        }

        #[test]
        fn normalization_is_affine_invariant(
            xs in proptest::collection::vec(-100.0f64..100.0, 3..60),
            a in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0],
            b in -50.0f64..50.0,
        ) {
            let p = ScorerParams::<f64>::neutral(1);
            let mut plain = Ingestor::new(1, 4);
            let mut moved = Ingestor::new(1, 4);
            for (t, &x) in xs.iter().enumerate() {
                let ev = |v: f64| ApplicantEvent {
                    applicant_id: t.to_string(),
                    event_time_ms: t as i64,
                    raw_features: vec![v],
                };
                let z0 = plain.ingest(&ev(x), &p).unwrap().normalized[0];
                let z1 = moved.ingest(&ev(a * x + b), &p).unwrap().normalized[0];
                if t >= 2 {
                    prop_assert!((z0.abs() - z1.abs()).abs() <= 1e-6 * z0.abs().max(1.0),
                        "t={} z0={} z1={}", t, z0, z1);
                }
            }
        }
    }
}
