//! Document-level extensions of pretrained machine-translation metrics.
//!
//! Each sentence is encoded together with the sentences that precede it in
//! its document, and the metric is then computed on the sentence of
//! interest alone: alignment for [`bertscore`], log-probability aggregation
//! for [`prism`], pooling and regression for [`comet`]. The [`harness`]
//! module measures how well any of them tracks human judgments.

pub mod backend;
pub mod bertscore;
pub mod comet;
pub mod corpus;
pub mod harness;
pub mod metric;
pub mod prism;
pub mod tsv;

pub use ndarray;

pub use backend::{Backend, BackendError, Provider, TextUnits};
pub use corpus::{ContextMode, ParallelCorpus, ScoringInput};
pub use metric::{MetricError, ReferenceFreeScorer, SegmentMetric};
