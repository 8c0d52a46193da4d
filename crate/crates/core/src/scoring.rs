//! Risk scoring and explanation: probability of default, gradient attributions
//! and snapshot-ensemble confidence.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::domain::ScorerParams;
use crate::error::{Error, Result};
use crate::ingest::{synthesize_features, FeatureFrame};
use crate::scalar::Scalar;

/// `intercept + Σ coefficients[i]·weighted[i] + fusion_gain·fusion`.
pub fn linear_index<T: Scalar>(frame: &FeatureFrame<T>, params: &ScorerParams<T>) -> Result<T> {
    params.check_dim(frame.weighted.len())?;
    let dot = frame
        .weighted
        .iter()
        .zip(&params.coefficients)
        .fold(T::zero(), |acc, (&x, &b)| acc + b * x);
    Ok(params.intercept + dot + params.fusion_gain * frame.fusion)
}

/// Logistic function, evaluated without overflow and kept strictly inside (0, 1).
pub fn logistic<T: Scalar>(z: T) -> T {
    let p = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    p.max(T::min_positive_value()).min(T::below_one())
}

pub fn probability_of_default<T: Scalar>(
    frame: &FeatureFrame<T>,
    params: &ScorerParams<T>,
) -> Result<T> {
    linear_index(frame, params).map(logistic)
}

/// Per-feature sensitivities of the probability of default with respect to the
/// normalized features, plus a ranking by magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector<T> {
    pub values: Vec<T>,
    /// Feature indices by `|value|` descending, lower index first on ties.
    pub ranking: Vec<usize>,
}

impl<T: Scalar> AttributionVector<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        let mut ranking: Vec<usize> = (0..values.len()).collect();
        // stable sort keeps lower indices ahead on ties
        ranking.sort_by(|&a, &b| {
            values[b]
                .abs()
                .partial_cmp(&values[a].abs())
                .unwrap_or(Ordering::Equal)
        });
        Self { values, ranking }
    }

    /// The `k` largest attributions as `(feature index, value)` pairs.
    pub fn top_k(&self, k: usize) -> Vec<(usize, T)> {
        self.ranking
            .iter()
            .take(k)
            .map(|&i| (i, self.values[i]))
            .collect()
    }
}

/// Analytic gradient through both the weighted and the fusion paths:
/// `A_i = pd·(1 − pd)·(β_i·w_i + 2·β_S·α_i·F_i)`.
pub fn attribute<T: Scalar>(
    frame: &FeatureFrame<T>,
    params: &ScorerParams<T>,
) -> Result<AttributionVector<T>> {
    let pd = probability_of_default(frame, params)?;
    let slope = pd * (T::one() - pd);
    let two = T::lit(2.0);
    let values = frame
        .normalized
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let direct = params.coefficients[i] * params.feature_weights[i];
            let fused = two * params.fusion_gain * params.fusion_coefficients[i] * f;
            slope * (direct + fused)
        })
        .collect();
    Ok(AttributionVector::from_values(values))
}

/// The `K` most recently published parameter snapshots, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerEnsemble<T> {
    snapshots: VecDeque<ScorerParams<T>>,
}

impl<T: Scalar> ScorerEnsemble<T> {
    /// An ensemble of `size` copies of `initial`.
    pub fn new(size: usize, initial: ScorerParams<T>) -> Self {
        assert!(size >= 1, "ensemble size must be >= 1");
        Self {
            snapshots: std::iter::repeat_n(initial, size).collect(),
        }
    }

    /// Pushes a newer snapshot, dropping the oldest.
    pub fn publish(&mut self, params: ScorerParams<T>) {
        debug_assert!(params.version >= self.newest().version);
        self.snapshots.pop_back();
        self.snapshots.push_front(params);
    }

    pub fn newest(&self) -> &ScorerParams<T> {
        &self.snapshots[0]
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &ScorerParams<T>> {
        self.snapshots.iter()
    }
}

/// `1 − population variance` of a set of probabilities.
///
/// Returns exactly one iff all values are equal; distinct values always give
/// a result strictly below one. Clamped to `[0.75, 1]`.
pub fn confidence_from_pds<T: Scalar>(pds: &[T]) -> T {
    let Some(&first) = pds.first() else {
        return T::one();
    };
    if pds.iter().all(|&p| p == first) {
        return T::one();
    }
    let n = T::lit(pds.len() as f64);
    let mean = pds.iter().fold(T::zero(), |a, &p| a + p) / n;
    let var = pds
        .iter()
        .fold(T::zero(), |a, &p| a + (p - mean) * (p - mean))
        / n;
    (T::one() - var).max(T::lit(0.75)).min(T::below_one())
}

/// Confidence of a frame under the snapshot ensemble. Each snapshot scores the
/// frame's normalized features with its own weights.
pub fn confidence<T: Scalar>(frame: &FeatureFrame<T>, ensemble: &ScorerEnsemble<T>) -> Result<T> {
    let pds = ensemble
        .snapshots()
        .map(|params| {
            let f = synthesize_features(&frame.applicant_id, frame.normalized.clone(), params)?;
            probability_of_default(&f, params)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(confidence_from_pds(&pds))
}

/// Scoring output for one applicant.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskAssessment<T> {
    pub applicant_id: String,
    pub pd: T,
    pub confidence: T,
    pub attributions: AttributionVector<T>,
    pub params_version: u64,
    pub scored_at_ms: i64,
}

pub fn assess<T: Scalar>(
    frame: &FeatureFrame<T>,
    params: &ScorerParams<T>,
    ensemble: &ScorerEnsemble<T>,
    scored_at_ms: i64,
) -> Result<RiskAssessment<T>> {
    if frame.params_version != params.version {
        return Err(Error::VersionMismatch {
            frame: frame.params_version,
            params: params.version,
        });
    }
    Ok(RiskAssessment {
        applicant_id: frame.applicant_id.clone(),
        pd: probability_of_default(frame, params)?,
        confidence: confidence(frame, ensemble)?,
        attributions: attribute(frame, params)?,
        params_version: params.version,
        scored_at_ms,
    })
}
