//! Document-level Prism.
//!
//! One sentence conditions the encoder, the other is force-decoded. Both
//! sides carry the same context sentences; on the decoder side the context is
//! a prompt whose tokens are excluded from the aggregate. The final score is
//! the plain average of the two directions.

use std::fmt;
use std::str::FromStr;

use crate::backend::{Backend, TextUnits};
use crate::corpus::ScoringInput;
use crate::metric::{MetricError, SegmentMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean token log-probability.
    #[default]
    Mean,
    Sum,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            other => Err(format!("unknown aggregation `{other}` (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Reference in the encoder, hypothesis decoded.
    RefToHyp,
    /// Hypothesis in the encoder, reference decoded.
    HypToRef,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionScore {
    /// Mean or sum of focus-token log-probabilities, depending on `aggregation`.
    pub value: f64,
    pub token_count: usize,
    pub direction: Direction,
    pub aggregation: Aggregation,
}

pub fn direction_score(
    cond: &TextUnits,
    target: &TextUnits,
    backend: &Backend,
    aggregation: Aggregation,
    direction: Direction,
) -> Result<DirectionScore, MetricError> {
    let lp = backend.forced_logprobs(cond, target)?;
    let sum: f64 = lp.logprobs().iter().sum();
    let token_count = lp.focus_token_count();
    let value = match aggregation {
        Aggregation::Mean => sum / token_count as f64,
        Aggregation::Sum => sum,
    };
    Ok(DirectionScore {
        value,
        token_count,
        direction,
        aggregation,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PrismConfig {
    pub n_ctx: usize,
    pub aggregation: Aggregation,
}

fn score_units(
    backend: &Backend,
    reference: &TextUnits,
    hypothesis: &TextUnits,
    aggregation: Aggregation,
) -> Result<f64, MetricError> {
    let forward = direction_score(reference, hypothesis, backend, aggregation, Direction::RefToHyp)?;
    let backward = direction_score(hypothesis, reference, backend, aggregation, Direction::HypToRef)?;
    Ok(0.5 * (forward.value + backward.value))
}

/// Averages both directions. The hypothesis carries `hyp_side_ctx`, which is
/// the reference context unless the input was built in hypothesis-context mode.
pub fn prism_score(input: &ScoringInput, backend: &Backend, config: &PrismConfig) -> Result<f64, MetricError> {
    let reference = TextUnits::with_context(&input.ref_ctx.tail(config.n_ctx), input.reference.text.clone());
    let hypothesis =
        TextUnits::with_context(&input.hyp_side_ctx.tail(config.n_ctx), input.hypothesis.text.clone());
    score_units(backend, &reference, &hypothesis, config.aggregation)
}

pub fn sentence_score(
    backend: &Backend,
    hypothesis: &str,
    reference: &str,
    aggregation: Aggregation,
) -> Result<f64, MetricError> {
    score_units(
        backend,
        &TextUnits::single(reference),
        &TextUnits::single(hypothesis),
        aggregation,
    )
}

#[derive(Debug, Clone)]
pub struct DocPrism {
    pub backend: Backend,
    pub config: PrismConfig,
}

impl SegmentMetric for DocPrism {
    fn name(&self) -> &str {
        "doc-prism"
    }

    fn score(&self, input: &ScoringInput) -> Result<f64, MetricError> {
        prism_score(input, &self.backend, &self.config)
    }
}
