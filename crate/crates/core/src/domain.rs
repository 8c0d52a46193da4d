//! Domain types shared by every pipeline stage, plus input and config validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One incoming loan application.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplicantEvent<T> {
    pub applicant_id: String,
    pub event_time_ms: i64,
    pub raw_features: Vec<T>,
}

/// Binary repayment outcome. Serialized as `0` (repaid) or `1` (defaulted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Repaid,
    Defaulted,
}

impl Label {
    pub fn is_default(self) -> bool {
        self == Label::Defaulted
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Repaid => 0,
            Label::Defaulted => 1,
        }
    }

    /// The label as a 0/1 target value.
    pub fn target<T: Scalar>(self) -> T {
        if self.is_default() {
            T::one()
        } else {
            T::zero()
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Repaid),
            1 => Ok(Label::Defaulted),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

/// Delayed repayment label, joined back to a prior decision by applicant id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeEvent {
    pub applicant_id: String,
    pub outcome_time_ms: i64,
    pub label: Label,
}

/// One element of the merged input stream.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem<T> {
    Application(ApplicantEvent<T>),
    Outcome(OutcomeEvent),
}

/// Versioned scorer parameters.
///
/// The linear index is `intercept + Σ coefficients[i]·weighted[i] + fusion_gain·fusion`
/// where `weighted[i] = feature_weights[i]·normalized[i]` and
/// `fusion = Σ fusion_coefficients[i]·normalized[i]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<T> {
    pub version: u64,
    pub intercept: T,
    pub coefficients: Vec<T>,
    pub feature_weights: Vec<T>,
    pub fusion_coefficients: Vec<T>,
    pub fusion_gain: T,
}

impl<T: Scalar> ScorerParams<T> {
    /// Version 0 parameters: zero intercept and coefficients, unit feature
    /// weights, zero fusion.
    pub fn neutral(dim: usize) -> Self {
        Self {
            version: 0,
            intercept: T::zero(),
            coefficients: vec![T::zero(); dim],
            feature_weights: vec![T::one(); dim],
            fusion_coefficients: vec![T::zero(); dim],
            fusion_gain: T::zero(),
        }
    }

    /// Initial parameters for an engine run. Coefficients are drawn uniformly
    /// from `[-init_scale, init_scale]` with the config seed; `init_scale = 0`
    /// gives exactly [`ScorerParams::neutral`] with the configured fusion
    /// coefficients.
    pub fn initial(config: &EngineConfig) -> Self {
        use rand::{Rng, SeedableRng};

        let dim = config.feature_dim;
        let mut params = Self::neutral(dim);
        params.fusion_coefficients = config
            .fusion_coefficients()
            .iter()
            .map(|&a| T::lit(a))
            .collect();
        if config.init_scale > 0.0 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
            for c in &mut params.coefficients {
                *c = T::lit(rng.random_range(-config.init_scale..=config.init_scale));
            }
        }
        params
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Checks that every parameter vector has length `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        for len in [
            self.coefficients.len(),
            self.feature_weights.len(),
            self.fusion_coefficients.len(),
        ] {
            if len != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: len,
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite()
            && self.fusion_gain.is_finite()
            && self
                .coefficients
                .iter()
                .chain(&self.feature_weights)
                .chain(&self.fusion_coefficients)
                .all(|v| v.is_finite())
    }
}

fn default_drift_boost() -> f64 {
    2.0
}
fn default_join_capacity() -> usize {
    100_000
}
fn default_queue_capacity() -> usize {
    1024
}
fn default_top_k() -> usize {
    3
}
fn default_shards() -> usize {
    1
}
fn default_init_scale() -> f64 {
    0.01
}

/// Engine configuration. The JSON config file mirrors these keys exactly.
///
/// Keys without a serde default are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub feature_dim: usize,
    /// Threshold learning rate applied to the change in window loss.
    pub eta: f64,
    /// Drift trigger on the jump between consecutive window metrics.
    pub gamma: f64,
    /// Half-width of the Review band around the threshold.
    pub review_band: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub window_capacity: usize,
    /// Online gradient step size.
    pub learning_rate: f64,
    /// Number of parameter snapshots behind the confidence value.
    pub ensemble_size: usize,
    /// Labeled examples per tumbling metric window.
    pub metric_window: usize,
    pub pd_clip_epsilon: f64,
    pub seed: u64,
    pub deterministic_mode: bool,
    #[serde(default = "default_drift_boost")]
    pub drift_boost_factor: f64,
    #[serde(default = "default_join_capacity")]
    pub join_capacity: usize,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_shards")]
    pub scoring_shards: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Frozen fusion coefficients; uniform `1/n` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_coefficients: Option<Vec<f64>>,
}

impl EngineConfig {
    /// Default configuration for `feature_dim` features.
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            eta: -0.1,
            gamma: 0.25,
            review_band: 0.02,
            tau_init: 0.5,
            tau_min: 0.05,
            tau_max: 0.95,
            window_capacity: 1000,
            learning_rate: 0.02,
            ensemble_size: 4,
            metric_window: 250,
            pd_clip_epsilon: 1e-6,
            seed: 7,
            deterministic_mode: true,
            drift_boost_factor: default_drift_boost(),
            join_capacity: default_join_capacity(),
            queue_capacity: default_queue_capacity(),
            top_k: default_top_k(),
            scoring_shards: default_shards(),
            init_scale: default_init_scale(),
            fusion_coefficients: None,
        }
    }

    /// Fusion coefficients, resolving the uniform default.
    pub fn fusion_coefficients(&self) -> Vec<f64> {
        match &self.fusion_coefficients {
            Some(a) => a.clone(),
            None if self.feature_dim == 0 => Vec::new(),
            None => vec![1.0 / self.feature_dim as f64; self.feature_dim],
        }
    }

    pub fn tau_bounds(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }
}

/// Returns the event unchanged iff its features match `expected_dim` and are finite.
pub fn validate_event<T: Scalar>(
    event: ApplicantEvent<T>,
    expected_dim: usize,
) -> Result<ApplicantEvent<T>> {
    check_features(&event.raw_features, expected_dim)?;
    Ok(event)
}

pub(crate) fn check_features<T: Scalar>(features: &[T], expected_dim: usize) -> Result<()> {
    if features.len() != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: features.len(),
        });
    }
    match features.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteFeature { index }),
        None => Ok(()),
    }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, "must be finite"))
    }
}

/// Checks every config constraint and resolves defaults. Keys are checked in
/// declaration order and the first violation is reported.
pub fn validate_config(mut config: EngineConfig) -> Result<EngineConfig> {
    if config.feature_dim == 0 {
        return Err(Error::config("feature_dim", "must be >= 1"));
    }
    finite("eta", config.eta)?;
    finite("gamma", config.gamma)?;
    if config.gamma <= 0.0 {
        return Err(Error::config("gamma", "must be > 0"));
    }
    finite("review_band", config.review_band)?;
    if config.review_band < 0.0 {
        return Err(Error::config("review_band", "must be >= 0"));
    }
    for (key, v) in [
        ("tau_init", config.tau_init),
        ("tau_min", config.tau_min),
        ("tau_max", config.tau_max),
    ] {
        finite(key, v)?;
    }
    if config.tau_min <= 0.0 {
        return Err(Error::config("tau_min", "must be > 0"));
    }
    if config.tau_min > config.tau_init {
        return Err(Error::config("tau_min", "must be <= tau_init"));
    }
    if config.tau_init > config.tau_max {
        return Err(Error::config("tau_max", "must be >= tau_init"));
    }
    if config.tau_max >= 1.0 {
        return Err(Error::config("tau_max", "must be < 1"));
    }
    if config.window_capacity == 0 {
        return Err(Error::config("window_capacity", "must be >= 1"));
    }
    finite("learning_rate", config.learning_rate)?;
    if config.learning_rate <= 0.0 {
        return Err(Error::config("learning_rate", "must be > 0"));
    }
    if config.ensemble_size == 0 {
        return Err(Error::config("ensemble_size", "must be >= 1"));
    }
    if config.metric_window == 0 {
        return Err(Error::config("metric_window", "must be >= 1"));
    }
    if !(config.pd_clip_epsilon > 0.0 && config.pd_clip_epsilon < 0.5) {
        return Err(Error::config("pd_clip_epsilon", "must be in (0, 0.5)"));
    }
    if !(config.drift_boost_factor.is_finite() && config.drift_boost_factor >= 1.0) {
        return Err(Error::config(
            "drift_boost_factor",
            "must be finite and >= 1",
        ));
    }
    if config.join_capacity == 0 {
        return Err(Error::config("join_capacity", "must be >= 1"));
    }
    if config.queue_capacity == 0 {
        return Err(Error::config("queue_capacity", "must be >= 1"));
    }
    if config.scoring_shards == 0 {
        return Err(Error::config("scoring_shards", "must be >= 1"));
    }
    if !(config.init_scale.is_finite() && config.init_scale >= 0.0) {
        return Err(Error::config("init_scale", "must be finite and >= 0"));
    }
    let alpha = config.fusion_coefficients();
    if alpha.len() != config.feature_dim {
        return Err(Error::config(
            "fusion_coefficients",
            format!(
                "expected {} values, found {}",
                config.feature_dim,
                alpha.len()
            ),
        ));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::config("fusion_coefficients", "must be finite"));
    }
    config.fusion_coefficients = Some(alpha);
    Ok(config)
}
