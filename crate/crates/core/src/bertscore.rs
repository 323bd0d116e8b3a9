//! Document-level BERTScore.
//!
//! Reference and hypothesis are each embedded after their context sentences.
//! The similarity matrix, the greedy alignment and the precision/recall/F1
//! arithmetic then run over the sentence-of-interest tokens only.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use crate::backend::{Backend, Role, TextUnits, TokenEmbeddings};
use crate::corpus::{ParallelCorpus, ScoringInput};
use crate::metric::{MetricError, SegmentMetric};

/// Cosine similarities: rows are reference focus tokens, columns hypothesis focus tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    /// Wraps precomputed similarities; every entry must lie in `[-1, 1]`.
    pub fn from_values(values: Array2<f64>) -> Result<Self, MetricError> {
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(MetricError::Numeric(
                "similarities must lie in [-1, 1]".to_string(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScoreResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BertScoreResult {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    pub fn get(&self, output: BertScoreOutput) -> f64 {
        match output {
            BertScoreOutput::Precision => self.precision,
            BertScoreOutput::Recall => self.recall,
            BertScoreOutput::F1 => self.f1,
        }
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>, aa: f64, bb: f64) -> f64 {
    // sqrt(x * x) == x exactly, so identical vectors give exactly 1.
    (a.dot(&b) / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

pub fn similarity_matrix(
    ref_emb: &TokenEmbeddings,
    hyp_emb: &TokenEmbeddings,
) -> Result<SimilarityMatrix, MetricError> {
    if ref_emb.dim() != hyp_emb.dim() {
        return Err(MetricError::Shape(format!(
            "reference dim {} vs hypothesis dim {}",
            ref_emb.dim(),
            hyp_emb.dim()
        )));
    }
    let refs = ref_emb.focus_rows();
    let hyps = hyp_emb.focus_rows();
    if refs.nrows() == 0 || hyps.nrows() == 0 {
        return Err(MetricError::Span("empty focus span".to_string()));
    }
    let squared_norms = |rows: &ndarray::ArrayView2<f64>, side: &str| {
        rows.rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.dot(&r);
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(MetricError::Numeric(format!(
                        "{side} focus token {i} has a zero-norm vector"
                    )))
                }
            })
            .collect::<Result<Vec<f64>, _>>()
    };
    let ref_norms = squared_norms(&refs, "reference")?;
    let hyp_norms = squared_norms(&hyps, "hypothesis")?;
    let values = Array2::from_shape_fn((refs.nrows(), hyps.nrows()), |(i, j)| {
        cosine(refs.row(i), hyps.row(j), ref_norms[i], hyp_norms[j])
    });
    Ok(SimilarityMatrix { values })
}

fn weighted_mean(maxima: &[f64], weights: Option<&[f64]>, side: &str) -> Result<f64, MetricError> {
    match weights {
        None => Ok(maxima.iter().sum::<f64>() / maxima.len() as f64),
        Some(w) => {
            if w.len() != maxima.len() {
                return Err(MetricError::Shape(format!(
                    "{} {side} weights for {} tokens",
                    w.len(),
                    maxima.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(MetricError::Weights(format!(
                    "{side} weights must be finite and non-negative"
                )));
            }
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                return Err(MetricError::Weights(format!("all {side} weights are zero")));
            }
            let weighted: f64 = maxima.iter().zip(w).map(|(m, w)| m * w).sum();
            Ok(weighted / total)
        }
    }
}

/// Greedy matching: recall averages row maxima over reference tokens,
/// precision averages column maxima over hypothesis tokens.
pub fn greedy_scores(
    sim: &SimilarityMatrix,
    idf_ref: Option<&[f64]>,
    idf_hyp: Option<&[f64]>,
) -> Result<BertScoreResult, MetricError> {
    let (rows, cols) = sim.shape();
    if rows == 0 || cols == 0 {
        return Err(MetricError::Shape("empty similarity matrix".to_string()));
    }
    let row_max: Vec<f64> = sim
        .values
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let col_max: Vec<f64> = sim
        .values
        .columns()
        .into_iter()
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let recall = weighted_mean(&row_max, idf_ref, "reference")?;
    let precision = weighted_mean(&col_max, idf_hyp, "hypothesis")?;
    Ok(BertScoreResult::new(precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BertScoreOutput {
    Precision,
    Recall,
    #[default]
    F1,
}

/// Inverse document frequency over provider tokens, with +1 smoothing:
/// `idf(w) = ln((M + 1) / (df(w) + 1))` for `M` reference sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    unseen: f64,
}

impl IdfTable {
    pub fn from_token_lists<I, S>(sentences: I) -> Self
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut m = 0usize;
        for sentence in sentences {
            m += 1;
            let unique: HashSet<String> = sentence.into_iter().map(|t| t.as_ref().to_string()).collect();
            for token in unique {
                *df.entry(token).or_default() += 1;
            }
        }
        let total = (m + 1) as f64;
        let weights = df
            .into_iter()
            .map(|(t, d)| (t, (total / (d + 1) as f64).ln()))
            .collect();
        Self {
            weights,
            unseen: total.ln(),
        }
    }

    /// Tokenizes each reference segment with the provider (no context) and counts frequencies.
    pub fn from_reference_corpus(backend: &Backend, corpus: &ParallelCorpus) -> Result<Self, MetricError> {
        let mut lists = Vec::new();
        for doc in corpus.reference_docs() {
            for segment in doc.segments() {
                let emb = backend.embed(&TextUnits::single(segment.text.clone()), Role::Reference)?;
                let pieces = emb.focus_pieces().ok_or_else(|| {
                    MetricError::Weights("provider does not report token pieces; IDF unavailable".to_string())
                })?;
                lists.push(pieces.to_vec());
            }
        }
        Ok(Self::from_token_lists(lists))
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.unseen)
    }

    fn focus_weights(&self, emb: &TokenEmbeddings) -> Result<Vec<f64>, MetricError> {
        let pieces = emb.focus_pieces().ok_or_else(|| {
            MetricError::Weights("provider does not report token pieces; IDF unavailable".to_string())
        })?;
        Ok(pieces.iter().map(|p| self.weight(p)).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct BertScoreConfig {
    pub n_ctx: usize,
    pub idf: Option<Arc<IdfTable>>,
    pub output: BertScoreOutput,
}

fn score_units(
    backend: &Backend,
    reference: &TextUnits,
    hypothesis: &TextUnits,
    idf: Option<&IdfTable>,
) -> Result<BertScoreResult, MetricError> {
    let ref_emb = backend.embed(reference, Role::Reference)?;
    let hyp_emb = backend.embed(hypothesis, Role::Hypothesis)?;
    let sim = similarity_matrix(&ref_emb, &hyp_emb)?;
    match idf {
        None => greedy_scores(&sim, None, None),
        Some(table) => {
            let w_ref = table.focus_weights(&ref_emb)?;
            let w_hyp = table.focus_weights(&hyp_emb)?;
            greedy_scores(&sim, Some(&w_ref), Some(&w_hyp))
        }
    }
}

/// Precision, recall and F1 for one segment with `config.n_ctx` context sentences.
pub fn score_detail(
    input: &ScoringInput,
    backend: &Backend,
    config: &BertScoreConfig,
) -> Result<BertScoreResult, MetricError> {
    let reference = TextUnits::with_context(&input.ref_ctx.tail(config.n_ctx), input.reference.text.clone());
    let hypothesis =
        TextUnits::with_context(&input.hyp_side_ctx.tail(config.n_ctx), input.hypothesis.text.clone());
    score_units(backend, &reference, &hypothesis, config.idf.as_deref())
}

pub fn score_segment(
    input: &ScoringInput,
    backend: &Backend,
    config: &BertScoreConfig,
) -> Result<f64, MetricError> {
    Ok(score_detail(input, backend, config)?.get(config.output))
}

/// Plain sentence-level BERTScore on `(hypothesis, reference)`.
pub fn sentence_score(
    backend: &Backend,
    hypothesis: &str,
    reference: &str,
    config: &BertScoreConfig,
) -> Result<f64, MetricError> {
    let result = score_units(
        backend,
        &TextUnits::single(reference),
        &TextUnits::single(hypothesis),
        config.idf.as_deref(),
    )?;
    Ok(result.get(config.output))
}

/// [`SegmentMetric`] adapter.
#[derive(Debug, Clone)]
pub struct DocBertScore {
    pub backend: Backend,
    pub config: BertScoreConfig,
}

impl SegmentMetric for DocBertScore {
    fn name(&self) -> &str {
        "doc-bertscore"
    }

    fn score(&self, input: &ScoringInput) -> Result<f64, MetricError> {
        score_segment(input, &self.backend, &self.config)
    }
}
