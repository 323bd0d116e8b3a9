//! Traits shared by the metric implementations.

use thiserror::Error;

use crate::backend::{BackendError, TextUnits};
use crate::corpus::ScoringInput;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("feature layout error: {0}")]
    Layout(String),
    #[error("span error: {0}")]
    Span(String),
}

/// Scores one segment given its source, hypothesis, reference and context.
pub trait SegmentMetric: Send + Sync {
    /// Short identifier written into score-file headers.
    fn name(&self) -> &str;

    fn score(&self, input: &ScoringInput) -> Result<f64, MetricError>;
}

/// Scores a candidate translation from the source alone, each with its own context.
pub trait ReferenceFreeScorer: Send + Sync {
    fn score_candidate(&self, source: &TextUnits, candidate: &TextUnits) -> Result<f64, MetricError>;
}

impl<F> ReferenceFreeScorer for F
where
    F: Fn(&TextUnits, &TextUnits) -> Result<f64, MetricError> + Send + Sync,
{
    fn score_candidate(&self, source: &TextUnits, candidate: &TextUnits) -> Result<f64, MetricError> {
        self(source, candidate)
    }
}
