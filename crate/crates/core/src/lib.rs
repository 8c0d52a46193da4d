//! Streaming credit-risk decision engine.
//!
//! Applications flow through five cooperating agents (acquisition, scoring,
//! explanation, decision, feedback). The numeric core is generic over
//! [`Scalar`]; the runtime, simulator and CLI run on `f64`.

pub mod audit;
pub mod cli;
pub mod domain;
pub mod error;
pub mod events;
pub mod feedback;
pub mod ingest;
pub mod policy;
pub mod runtime;
pub mod scalar;
pub mod scoring;
pub mod simharness;

pub use domain::{
    validate_config, validate_event, ApplicantEvent, EngineConfig, Label, OutcomeEvent,
    ScorerParams, StreamItem,
};
pub use error::{Error, Result};
pub use feedback::FeedbackLearner;
pub use ingest::{FeatureFrame, Ingestor, RunningStats};
pub use policy::{decide, Decision, ThresholdState};
pub use scalar::Scalar;
pub use scoring::{RiskAssessment, ScorerEnsemble};

pub type ApplicantEventF64 = ApplicantEvent<f64>;
pub type ApplicantEventF32 = ApplicantEvent<f32>;
pub type ScorerParamsF64 = ScorerParams<f64>;
pub type ScorerParamsF32 = ScorerParams<f32>;
pub type FeatureFrameF64 = FeatureFrame<f64>;
pub type FeatureFrameF32 = FeatureFrame<f32>;
pub type RiskAssessmentF64 = RiskAssessment<f64>;
pub type RiskAssessmentF32 = RiskAssessment<f32>;
pub type ScorerEnsembleF64 = ScorerEnsemble<f64>;
pub type ScorerEnsembleF32 = ScorerEnsemble<f32>;
pub type StreamItemF64 = StreamItem<f64>;
