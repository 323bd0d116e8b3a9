//! Meta-evaluation: system-level correlation with human judgments, PERM-BOTH
//! significance, contrastive accuracy and context ablations.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TextUnits;
use crate::corpus::{
    make_scoring_input, ContextMode, ContextWindow, ContrastiveExample, CorpusError, Distance, MqmTable,
    ParallelCorpus,
};
use crate::metric::{MetricError, ReferenceFreeScorer, SegmentMetric};

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("need at least 3 systems for a correlation, got {0}")]
    TooFewSystems(usize),
    #[error("missing value for system `{system}` at {doc_id}:{index}")]
    Missing {
        system: String,
        doc_id: String,
        index: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// What to do with a segment lacking a score or a human judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Error,
    /// Drop the segment for every system and every metric.
    Skip,
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Error => "error",
            MissingPolicy::Skip => "skip",
        })
    }
}

impl FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(MissingPolicy::Error),
            "skip" => Ok(MissingPolicy::Skip),
            other => Err(format!("unknown missing policy `{other}` (expected error or skip)")),
        }
    }
}

pub type SegmentKey = (String, usize);

/// Segment scores for every system, `[systems × segments]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    systems: Vec<String>,
    segment_keys: Vec<SegmentKey>,
    values: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(systems: Vec<String>, segment_keys: Vec<SegmentKey>, values: Array2<f64>) -> Result<Self, HarnessError> {
        if values.dim() != (systems.len(), segment_keys.len()) {
            return Err(HarnessError::Invalid(format!(
                "values are {:?} but there are {} systems and {} segments",
                values.dim(),
                systems.len(),
                segment_keys.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = systems.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(HarnessError::Invalid(format!("duplicate system `{dup}`")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((d, i)) = segment_keys.iter().find(|k| !seen.insert(*k)) {
            return Err(HarnessError::Invalid(format!("duplicate segment {d}:{i}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Invalid("score matrix has non-finite values".to_string()));
        }
        Ok(Self {
            systems,
            segment_keys,
            values,
        })
    }

    /// Builds a matrix from a cell lookup. Under [`MissingPolicy::Skip`] a
    /// segment missing for any system is dropped for all of them.
    pub fn from_cells<F>(
        systems: Vec<String>,
        segment_keys: Vec<SegmentKey>,
        policy: MissingPolicy,
        cell: F,
    ) -> Result<Self, HarnessError>
    where
        F: Fn(&str, &str, usize) -> Option<f64>,
    {
        let mut kept = Vec::with_capacity(segment_keys.len());
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(segment_keys.len());
        'keys: for (doc_id, index) in segment_keys {
            let mut column = Vec::with_capacity(systems.len());
            for system in &systems {
                match cell(system, &doc_id, index) {
                    Some(v) => column.push(v),
                    None if policy == MissingPolicy::Skip => continue 'keys,
                    None => {
                        return Err(HarnessError::Missing {
                            system: system.clone(),
                            doc_id,
                            index,
                        })
                    }
                }
            }
            kept.push((doc_id, index));
            columns.push(column);
        }
        let values = Array2::from_shape_fn((systems.len(), kept.len()), |(s, k)| columns[k][s]);
        Self::new(systems, kept, values)
    }

    pub fn systems(&self) -> &[String] {
        &self.systems
    }

    pub fn segment_keys(&self) -> &[SegmentKey] {
        &self.segment_keys
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, system: &str, doc_id: &str, index: usize) -> Option<f64> {
        let s = self.systems.iter().position(|x| x == system)?;
        let k = self.segment_keys.iter().position(|(d, i)| d == doc_id && *i == index)?;
        Some(self.values[[s, k]])
    }

    fn check_aligned(&self, other: &ScoreMatrix) -> Result<(), HarnessError> {
        if self.systems != other.systems {
            return Err(HarnessError::Alignment(format!(
                "systems differ: {:?} vs {:?}",
                self.systems, other.systems
            )));
        }
        if self.segment_keys != other.segment_keys {
            return Err(HarnessError::Alignment("segment keys differ".to_string()));
        }
        Ok(())
    }
}

/// Unweighted mean of each system's segment scores.
pub fn system_scores(m: &ScoreMatrix) -> Vec<f64> {
    let all: Vec<usize> = (0..m.segment_keys.len()).collect();
    system_means(m, &all)
}

fn system_means(m: &ScoreMatrix, columns: &[usize]) -> Vec<f64> {
    m.values
        .rows()
        .into_iter()
        .map(|row| columns.iter().map(|&k| row[k]).sum::<f64>() / columns.len() as f64)
        .collect()
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, HarnessError> {
    if x.len() != y.len() {
        return Err(HarnessError::Alignment(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(HarnessError::TooFewSystems(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HarnessError::DegenerateVariance(
            "one of the inputs is constant".to_string(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Human scores oriented higher-better and averaged per system over the kept segments.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanAlignment {
    /// Column indices of the metric matrix that have judgments for every system.
    pub columns: Vec<usize>,
    pub system_scores: Vec<f64>,
}

pub fn align_human(m: &ScoreMatrix, human: &MqmTable, policy: MissingPolicy) -> Result<HumanAlignment, HarnessError> {
    if let Some(s) = m.systems.iter().find(|s| !human.has_system(s)) {
        return Err(HarnessError::Alignment(format!("no human judgments for system `{s}`")));
    }
    let mut columns = Vec::new();
    'keys: for (k, (doc_id, index)) in m.segment_keys.iter().enumerate() {
        for system in &m.systems {
            if human.get(system, doc_id, *index).is_none() {
                match policy {
                    MissingPolicy::Skip => continue 'keys,
                    MissingPolicy::Error => {
                        return Err(HarnessError::Missing {
                            system: system.clone(),
                            doc_id: doc_id.clone(),
                            index: *index,
                        })
                    }
                }
            }
        }
        columns.push(k);
    }
    if columns.is_empty() {
        return Err(HarnessError::Alignment(
            "no segment is judged for every system".to_string(),
        ));
    }
    let system_scores = m
        .systems
        .iter()
        .map(|s| {
            columns
                .iter()
                .map(|&k| {
                    let (d, i) = &m.segment_keys[k];
                    human.oriented(s, d, *i).expect("checked above")
                })
                .sum::<f64>()
                / columns.len() as f64
        })
        .collect();
    Ok(HumanAlignment { columns, system_scores })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub pearson: f64,
    pub n_systems: usize,
    pub n_segments: usize,
}

/// System-level Pearson correlation of a metric with human judgments.
pub fn correlate(m: &ScoreMatrix, human: &MqmTable, policy: MissingPolicy) -> Result<Correlation, HarnessError> {
    let aligned = align_human(m, human, policy)?;
    let metric = system_means(m, &aligned.columns);
    Ok(Correlation {
        pearson: pearson(&metric, &aligned.system_scores)?,
        n_systems: m.systems.len(),
        n_segments: aligned.columns.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceResult {
    pub corr_a: f64,
    pub corr_b: f64,
    /// `corr_a - corr_b`.
    pub delta: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

impl SignificanceResult {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Generator for permutation `k`: the base seed with stream `k`.
fn permutation_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Two-sided PERM-BOTH test on the difference of system-level correlations.
///
/// Each null draw swaps every system's whole score row between the two
/// metrics with probability one half.
pub fn perm_both(
    a: &ScoreMatrix,
    b: &ScoreMatrix,
    human: &MqmTable,
    n_perm: usize,
    seed: u64,
    policy: MissingPolicy,
) -> Result<SignificanceResult, HarnessError> {
    a.check_aligned(b)?;
    let aligned = align_human(a, human, policy)?;
    let sys_a = system_means(a, &aligned.columns);
    let sys_b = system_means(b, &aligned.columns);
    let h = &aligned.system_scores;
    let corr_a = pearson(&sys_a, h)?;
    let corr_b = pearson(&sys_b, h)?;
    let delta = corr_a - corr_b;

    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut rng = permutation_rng(seed, k);
            let mut pa = sys_a.clone();
            let mut pb = sys_b.clone();
            for i in 0..pa.len() {
                if rng.random::<bool>() {
                    std::mem::swap(&mut pa[i], &mut pb[i]);
                }
            }
            Ok(pearson(&pa, h)? - pearson(&pb, h)?)
        })
        .collect::<Result<_, HarnessError>>()?;
    let extreme = null.iter().filter(|d| d.abs() >= delta.abs()).count();
    Ok(SignificanceResult {
        corr_a,
        corr_b,
        delta,
        p_value: (1 + extreme) as f64 / (1 + n_perm) as f64,
        n_permutations: n_perm,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastiveReport {
    pub total: Bucket,
    pub intra: Bucket,
    pub inter: Bucket,
    /// Examples without a distance label. They count toward `total` only.
    pub unlabeled: Bucket,
    /// Per-example outcome, in input order.
    pub outcomes: Vec<bool>,
}

impl ContrastiveReport {
    pub fn total_accuracy(&self) -> f64 {
        self.total.accuracy().unwrap_or(0.0)
    }

    pub fn intra_accuracy(&self) -> Option<f64> {
        self.intra.accuracy()
    }

    pub fn inter_accuracy(&self) -> Option<f64> {
        self.inter.accuracy()
    }
}

fn units_with_context(ctx: &ContextWindow, n: usize, focus: &str) -> Result<TextUnits, MetricError> {
    let mut units = ctx.tail(n).sentences().to_vec();
    units.push(focus.to_string());
    Ok(TextUnits::new(units)?)
}

/// Counts an example correct only if the correct candidate scores strictly
/// above every contrastive one. Ties and NaNs count as incorrect.
pub fn contrastive_eval(
    examples: &[ContrastiveExample],
    scorer: &dyn ReferenceFreeScorer,
    n_ctx: usize,
) -> Result<ContrastiveReport, HarnessError> {
    let outcomes: Vec<bool> = examples
        .par_iter()
        .map(|ex| -> Result<bool, HarnessError> {
            let source = units_with_context(&ex.source_ctx, n_ctx, &ex.source)?;
            let score = |candidate: &str| -> Result<f64, HarnessError> {
                let cand = units_with_context(&ex.target_ctx, n_ctx, candidate)?;
                Ok(scorer.score_candidate(&source, &cand)?)
            };
            let good = score(&ex.correct)?;
            let mut ok = !good.is_nan();
            for alt in &ex.contrastive {
                let s = score(alt)?;
                ok &= !s.is_nan() && good > s;
            }
            Ok(ok)
        })
        .collect::<Result<_, _>>()?;
    let mut report = ContrastiveReport::default();
    for (ex, &ok) in examples.iter().zip(&outcomes) {
        report.total.add(ok);
        match ex.distance {
            Distance::Intra => report.intra.add(ok),
            Distance::Inter => report.inter.add(ok),
            Distance::Unknown => report.unlabeled.add(ok),
        }
    }
    report.outcomes = outcomes;
    Ok(report)
}

/// Scores every (system, segment) pair. Inputs carry up to `n_ctx` context
/// sentences; the metric's own configuration may trim further.
pub fn score_corpus(
    corpus: &ParallelCorpus,
    metric: &dyn SegmentMetric,
    n_ctx: usize,
    mode: ContextMode,
) -> Result<ScoreMatrix, HarnessError> {
    let systems: Vec<String> = corpus.system_names().map(str::to_string).collect();
    let keys = corpus.segment_keys();
    let cells: Vec<(usize, usize)> = (0..systems.len())
        .flat_map(|s| (0..keys.len()).map(move |k| (s, k)))
        .collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(s, k)| {
            let (doc_id, index) = &keys[k];
            let input = make_scoring_input(corpus, &systems[s], doc_id, *index, n_ctx, mode)?;
            Ok(metric.score(&input)?)
        })
        .collect::<Result<_, HarnessError>>()?;
    let values = Array2::from_shape_vec((systems.len(), keys.len()), scores)
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    ScoreMatrix::new(systems, keys, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub n_ctx: usize,
    pub mode: ContextMode,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, n_ctx: usize, mode: ContextMode) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.n_ctx == n_ctx && c.mode == mode)
            .map(|c| c.correlation.pearson)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.cells.iter().map(|c| c.n_ctx).collect();
        sizes.dedup();
        sizes
    }
}

/// One correlation per (size, mode) cell. `make_metric` builds the metric for a context size.
pub fn ablate_context<F>(
    corpus: &ParallelCorpus,
    human: &MqmTable,
    make_metric: F,
    sizes: &[usize],
    modes: &[ContextMode],
    policy: MissingPolicy,
) -> Result<AblationTable, HarnessError>
where
    F: Fn(usize) -> Result<Box<dyn SegmentMetric>, HarnessError>,
{
    let mut table = AblationTable::default();
    for &n in sizes {
        let metric = make_metric(n)?;
        for &mode in modes {
            let scores = score_corpus(corpus, metric.as_ref(), n, mode)?;
            table.cells.push(AblationCell {
                n_ctx: n,
                mode,
                correlation: correlate(&scores, human, policy)?,
            });
        }
    }
    Ok(table)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub metric: String,
    pub correlation: Correlation,
    /// Outcome of the test against the row's counterpart, if one was run.
    pub significance: Option<SignificanceResult>,
}

/// Correlations with a `*` on rows significantly better than their counterpart.
pub fn format_correlation_table(rows: &[CorrelationRow]) -> String {
    let mut out = String::from("metric\tpearson\tsystems\tsegments\tp_value\n");
    for r in rows {
        let star = match &r.significance {
            Some(s) if s.delta > 0.0 && s.is_significant(SIGNIFICANCE_LEVEL) => "*",
            _ => "",
        };
        let p = r
            .significance
            .as_ref()
            .map_or_else(|| "-".to_string(), |s| format!("{:.4}", s.p_value));
        out.push_str(&format!(
            "{}\t{:.4}{star}\t{}\t{}\t{p}\n",
            r.metric, r.correlation.pearson, r.correlation.n_systems, r.correlation.n_segments
        ));
    }
    out
}

pub fn format_significance(metric_a: &str, metric_b: &str, s: &SignificanceResult) -> String {
    format!(
        "metric_a\tmetric_b\tpearson_a\tpearson_b\tdelta\tp_value\tn_perm\tseed\tsignificant\n\
         {metric_a}\t{metric_b}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
        s.corr_a,
        s.corr_b,
        s.delta,
        s.p_value,
        s.n_permutations,
        s.seed,
        if s.is_significant(SIGNIFICANCE_LEVEL) { "yes" } else { "no" }
    )
}

/// One row per labelled report. Accuracies in percent, `-` for empty buckets.
pub fn format_contrastive(rows: &[(String, ContrastiveReport)]) -> String {
    let mut out = String::from("set\tintra\tinter\ttotal\tn_intra\tn_inter\tn_total\n");
    for (label, r) in rows {
        out.push_str(&format!(
            "{label}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            fmt_opt(r.intra_accuracy()),
            fmt_opt(r.inter_accuracy()),
            fmt_opt(r.total.accuracy()),
            r.intra.total,
            r.inter.total,
            r.total.total
        ));
    }
    out
}

/// Long form: one row per (size, mode) cell.
pub fn format_ablation(table: &AblationTable) -> String {
    let mut out = String::from("n_ctx\tmode\tpearson\n");
    for c in &table.cells {
        out.push_str(&format!("{}\t{}\t{:.4}\n", c.n_ctx, c.mode, c.correlation.pearson));
    }
    out
}

/// Side-by-side reference- and hypothesis-context correlations per size.
pub fn format_mode_comparison(table: &AblationTable) -> String {
    let mut out = String::from("n_ctx\treference\thypothesis\n");
    let cell = |n, m| table.get(n, m).map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    for n in table.sizes() {
        out.push_str(&format!(
            "{n}\t{}\t{}\n",
            cell(n, ContextMode::Reference),
            cell(n, ContextMode::Hypothesis)
        ));
    }
    out
}
