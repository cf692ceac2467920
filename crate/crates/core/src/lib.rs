//! Selective prediction for multi-label classifier scores.
//!
//! Scores are per-class probabilities with binary labels. The toolkit turns
//! them into per-class uncertainty (binary entropy, or distance from the
//! decision boundary), calibrates rejection thresholds from quantiles of the
//! uncertainty of correct predictions, applies them at image or cell
//! granularity, and reports AUC, F1 and rejection rate before and after.
//!
//! All numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod artifact;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rejection;
pub mod scalar;
pub mod seed;
pub mod split;
pub mod synth;

pub use error::{Error, IssueKind, Result, ValidationIssue};
pub use model::{Mechanism, Mode, Scope};
pub use scalar::Scalar;

pub type ClassSchema = model::ClassSchema<f64>;
pub type ScoreTable = model::ScoreTable<f64>;
pub type PredictionRecord = model::PredictionRecord<f64>;
pub type RawRecord = model::RawRecord<f64>;
pub type ThresholdArtifact = artifact::ThresholdArtifact<f64>;
pub type UncertaintyMatrix = rejection::UncertaintyMatrix<f64>;
pub type ClassMetrics = metrics::ClassMetrics<f64>;
pub type CalibrationConfig = calibration::CalibrationConfig<f64>;
pub type PercentileGrid = calibration::PercentileGrid<f64>;
pub type RiskCoveragePoint = calibration::RiskCoveragePoint<f64>;
pub type Calibration = calibration::Calibration<f64>;
pub type EvaluationReport = evaluation::EvaluationReport<f64>;
pub type BootstrapResult = evaluation::BootstrapResult<f64>;
pub type ComparisonReport = evaluation::ComparisonReport<f64>;
pub type Generated = synth::Generated<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type ClassSchema = crate::model::ClassSchema<f32>;
    pub type ScoreTable = crate::model::ScoreTable<f32>;
    pub type ThresholdArtifact = crate::artifact::ThresholdArtifact<f32>;
    pub type CalibrationConfig = crate::calibration::CalibrationConfig<f32>;
    pub type EvaluationReport = crate::evaluation::EvaluationReport<f32>;
}

pub use rejection::SelectionMask;
pub use split::{Assignment, SplitManifest, SplitStrategy};
pub use synth::GeneratorSpec;
