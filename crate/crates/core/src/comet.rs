//! Document-level COMET and COMET-QE.
//!
//! Each of source, hypothesis and (for COMET) reference is encoded after its
//! context sentences and mean-pooled over its own tokens only. The pooled
//! vectors are combined according to a feature layout and fed to a small
//! feed-forward regressor loaded from a portable weights file.
//!
//! Weights file format (whitespace separated, `#` starts a comment):
//!
//! ```text
//! format docmt-regressor 1
//! layout src hyp ref hyp*ref |hyp-ref| hyp*src |hyp-src|
//! dim 4
//! layer 28 8 tanh
//! weights <8 × 28 values, row-major, one row per output unit>
//! bias <8 values>
//! layer 8 1 identity
//! weights <8 values>
//! bias <1 value>
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};

use crate::backend::{Backend, Role, TextUnits, TokenEmbeddings};
use crate::corpus::ScoringInput;
use crate::metric::{MetricError, ReferenceFreeScorer, SegmentMetric};

/// Mean of the focus-span token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector(pub Array1<f64>);

impl PooledVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn pool_sentence(emb: &TokenEmbeddings) -> Result<PooledVector, MetricError> {
    let rows = emb.focus_rows();
    if rows.nrows() == 0 {
        return Err(MetricError::Span("cannot pool an empty focus span".to_string()));
    }
    let mut sum = Array1::<f64>::zeros(rows.ncols());
    for row in rows.rows() {
        sum += &row;
    }
    Ok(PooledVector(sum / rows.nrows() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureAtom {
    Src,
    Hyp,
    Ref,
    HypTimesRef,
    AbsHypMinusRef,
    HypTimesSrc,
    AbsHypMinusSrc,
}

impl FeatureAtom {
    pub const ALL: [FeatureAtom; 7] = [
        FeatureAtom::Src,
        FeatureAtom::Hyp,
        FeatureAtom::Ref,
        FeatureAtom::HypTimesRef,
        FeatureAtom::AbsHypMinusRef,
        FeatureAtom::HypTimesSrc,
        FeatureAtom::AbsHypMinusSrc,
    ];

    pub fn needs_reference(self) -> bool {
        matches!(
            self,
            FeatureAtom::Ref | FeatureAtom::HypTimesRef | FeatureAtom::AbsHypMinusRef
        )
    }

    fn token(self) -> &'static str {
        match self {
            FeatureAtom::Src => "src",
            FeatureAtom::Hyp => "hyp",
            FeatureAtom::Ref => "ref",
            FeatureAtom::HypTimesRef => "hyp*ref",
            FeatureAtom::AbsHypMinusRef => "|hyp-ref|",
            FeatureAtom::HypTimesSrc => "hyp*src",
            FeatureAtom::AbsHypMinusSrc => "|hyp-src|",
        }
    }
}

impl fmt::Display for FeatureAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FeatureAtom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureAtom::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| format!("unknown feature atom `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout(Vec<FeatureAtom>);

impl FeatureLayout {
    pub fn new(atoms: Vec<FeatureAtom>) -> Result<Self, MetricError> {
        if atoms.is_empty() {
            return Err(MetricError::Layout("feature layout is empty".to_string()));
        }
        Ok(Self(atoms))
    }

    /// The seven-atom reference-based layout.
    pub fn full() -> Self {
        Self(FeatureAtom::ALL.to_vec())
    }

    /// `src hyp hyp*src |hyp-src|`.
    pub fn quality_estimation() -> Self {
        Self(vec![
            FeatureAtom::Src,
            FeatureAtom::Hyp,
            FeatureAtom::HypTimesSrc,
            FeatureAtom::AbsHypMinusSrc,
        ])
    }

    pub fn atoms(&self) -> &[FeatureAtom] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_reference_free(&self) -> bool {
        !self.0.iter().any(|a| a.needs_reference())
    }
}

/// Concatenates the layout's atoms in order.
pub fn combine_features(
    src: &PooledVector,
    hyp: &PooledVector,
    reference: Option<&PooledVector>,
    layout: &FeatureLayout,
) -> Result<Array1<f64>, MetricError> {
    let dim = hyp.dim();
    if src.dim() != dim || reference.is_some_and(|r| r.dim() != dim) {
        return Err(MetricError::Shape("pooled vectors differ in dimension".to_string()));
    }
    let need_ref = || {
        reference.ok_or_else(|| {
            MetricError::Layout("layout uses the reference but none was given".to_string())
        })
    };
    let mut out = Vec::with_capacity(dim * layout.len());
    for atom in layout.atoms() {
        let block: Array1<f64> = match atom {
            FeatureAtom::Src => src.0.clone(),
            FeatureAtom::Hyp => hyp.0.clone(),
            FeatureAtom::Ref => need_ref()?.0.clone(),
            FeatureAtom::HypTimesRef => &hyp.0 * &need_ref()?.0,
            FeatureAtom::AbsHypMinusRef => (&hyp.0 - &need_ref()?.0).mapv(f64::abs),
            FeatureAtom::HypTimesSrc => &hyp.0 * &src.0,
            FeatureAtom::AbsHypMinusSrc => (&hyp.0 - &src.0).mapv(f64::abs),
        };
        out.extend(block);
    }
    Ok(Array1::from(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// `y = activation(W x + b)` with `W` shaped `[outputs × inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorWeights {
    layout: FeatureLayout,
    embedding_dim: usize,
    layers: Vec<DenseLayer>,
}

impl RegressorWeights {
    pub fn new(layout: FeatureLayout, embedding_dim: usize, layers: Vec<DenseLayer>) -> Result<Self, MetricError> {
        if embedding_dim == 0 {
            return Err(MetricError::Shape("embedding dim must be positive".to_string()));
        }
        if layers.is_empty() {
            return Err(MetricError::Shape("regressor has no layers".to_string()));
        }
        let mut width = embedding_dim * layout.len();
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weights.dim();
            if cols != width {
                return Err(MetricError::Shape(format!(
                    "layer {i} expects {cols} inputs but receives {width}"
                )));
            }
            if layer.bias.len() != rows {
                return Err(MetricError::Shape(format!(
                    "layer {i} has {rows} outputs but {} biases",
                    layer.bias.len()
                )));
            }
            width = rows;
        }
        if width != 1 {
            return Err(MetricError::Shape(format!("final layer has {width} outputs, expected 1")));
        }
        Ok(Self {
            layout,
            embedding_dim,
            layers,
        })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn input_dim(&self) -> usize {
        self.embedding_dim * self.layout.len()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| MetricError::Weights(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            MetricError::Weights(m) => MetricError::Weights(format!("{}: {m}", path.display())),
            MetricError::Shape(m) => MetricError::Shape(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, MetricError> {
        let mut tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| {
                let content = line.split('#').next().unwrap_or("");
                content.split_whitespace().map(move |t| (i + 1, t))
            })
            .peekable();
        let err = |line: usize, m: String| MetricError::Weights(format!("line {line}: {m}"));
        let expect = |word: &str, tokens: &mut std::iter::Peekable<_>| -> Result<usize, MetricError> {
            let next: Option<(usize, &str)> = Iterator::next(tokens);
            match next {
                Some((line, t)) if t == word => Ok(line),
                Some((line, t)) => Err(err(line, format!("expected `{word}`, found `{t}`"))),
                None => Err(MetricError::Weights(format!("unexpected end of file, expected `{word}`"))),
            }
        };
        let number = |tokens: &mut std::iter::Peekable<_>, what: &str| -> Result<f64, MetricError> {
            let next: Option<(usize, &str)> = Iterator::next(tokens);
            match next {
                Some((line, t)) => t
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line, format!("invalid {what} `{t}`"))),
                None => Err(MetricError::Weights(format!("unexpected end of file reading {what}"))),
            }
        };
        let count = |tokens: &mut std::iter::Peekable<_>, what: &str| -> Result<usize, MetricError> {
            let next: Option<(usize, &str)> = Iterator::next(tokens);
            match next {
                Some((line, t)) => t.parse::<usize>().map_err(|_| err(line, format!("invalid {what} `{t}`"))),
                None => Err(MetricError::Weights(format!("unexpected end of file reading {what}"))),
            }
        };

        expect("format", &mut tokens)?;
        let line = expect("docmt-regressor", &mut tokens)?;
        if count(&mut tokens, "format version")? != 1 {
            return Err(err(line, "unsupported format version".to_string()));
        }
        expect("layout", &mut tokens)?;
        let mut atoms = Vec::new();
        while let Some(&(line, t)) = tokens.peek() {
            if t == "dim" {
                break;
            }
            atoms.push(t.parse::<FeatureAtom>().map_err(|m| err(line, m))?);
            tokens.next();
        }
        let layout = FeatureLayout::new(atoms)?;
        expect("dim", &mut tokens)?;
        let dim = count(&mut tokens, "dim")?;
        let mut layers = Vec::new();
        while tokens.peek().is_some() {
            let line = expect("layer", &mut tokens)?;
            let inputs = count(&mut tokens, "layer input size")?;
            let outputs = count(&mut tokens, "layer output size")?;
            let activation: Activation = match Iterator::next(&mut tokens) {
                Some((l, t)) => t.parse().map_err(|m| err(l, m))?,
                None => return Err(err(line, "missing activation".to_string())),
            };
            expect("weights", &mut tokens)?;
            let weights = (0..inputs * outputs)
                .map(|_| number(&mut tokens, "weight"))
                .collect::<Result<Vec<_>, _>>()?;
            expect("bias", &mut tokens)?;
            let bias = (0..outputs)
                .map(|_| number(&mut tokens, "bias"))
                .collect::<Result<Vec<_>, _>>()?;
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((outputs, inputs), weights)
                    .map_err(|e| err(line, e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        Self::new(layout, dim, layers)
    }

    /// Serializes to the text format read by [`RegressorWeights::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("format docmt-regressor 1\nlayout");
        for atom in self.layout.atoms() {
            out.push(' ');
            out.push_str(atom.token());
        }
        out.push_str(&format!("\ndim {}\n", self.embedding_dim));
        for layer in &self.layers {
            let (rows, cols) = layer.weights.dim();
            out.push_str(&format!("layer {cols} {rows} {}\nweights\n", layer.activation));
            for row in layer.weights.rows() {
                let values: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&values.join(" "));
                out.push('\n');
            }
            let bias: Vec<String> = layer.bias.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("bias {}\n", bias.join(" ")));
        }
        out
    }
}

pub fn regress(features: ArrayView1<f64>, weights: &RegressorWeights) -> Result<f64, MetricError> {
    if features.len() != weights.input_dim() {
        return Err(MetricError::Shape(format!(
            "{} features, regressor expects {}",
            features.len(),
            weights.input_dim()
        )));
    }
    let mut x = features.to_owned();
    for layer in &weights.layers {
        x = (layer.weights.dot(&x) + &layer.bias).mapv(|v| layer.activation.apply(v));
    }
    Ok(x[0])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CometConfig {
    pub n_ctx: usize,
}

fn pooled(backend: &Backend, text: &TextUnits, role: Role) -> Result<PooledVector, MetricError> {
    pool_sentence(&backend.embed(text, role)?)
}

fn comet_units(
    backend: &Backend,
    weights: &RegressorWeights,
    source: &TextUnits,
    hypothesis: &TextUnits,
    reference: Option<&TextUnits>,
) -> Result<f64, MetricError> {
    let src = pooled(backend, source, Role::Source)?;
    let hyp = pooled(backend, hypothesis, Role::Hypothesis)?;
    let reference = reference
        .map(|r| pooled(backend, r, Role::Reference))
        .transpose()?;
    let features = combine_features(&src, &hyp, reference.as_ref(), weights.layout())?;
    regress(features.view(), weights)
}

/// Reference-based score from `⟨c_s;s, ctx;h, c_r;r⟩`, where `ctx` is the hypothesis-side context.
pub fn comet_score(
    input: &ScoringInput,
    backend: &Backend,
    weights: &RegressorWeights,
    config: &CometConfig,
) -> Result<f64, MetricError> {
    let n = config.n_ctx;
    comet_units(
        backend,
        weights,
        &TextUnits::with_context(&input.source_ctx.tail(n), input.source.text.clone()),
        &TextUnits::with_context(&input.hyp_side_ctx.tail(n), input.hypothesis.text.clone()),
        Some(&TextUnits::with_context(&input.ref_ctx.tail(n), input.reference.text.clone())),
    )
}

fn require_reference_free(weights: &RegressorWeights) -> Result<(), MetricError> {
    if weights.layout().is_reference_free() {
        Ok(())
    } else {
        Err(MetricError::Layout(
            "quality estimation needs a layout without reference atoms".to_string(),
        ))
    }
}

/// Reference-free score from `⟨c_s;s, c_h;h⟩`; the hypothesis takes the system's own prior output.
pub fn comet_qe_score(
    input: &ScoringInput,
    backend: &Backend,
    weights: &RegressorWeights,
    config: &CometConfig,
) -> Result<f64, MetricError> {
    require_reference_free(weights)?;
    let n = config.n_ctx;
    comet_units(
        backend,
        weights,
        &TextUnits::with_context(&input.source_ctx.tail(n), input.source.text.clone()),
        &TextUnits::with_context(&input.hyp_own_ctx.tail(n), input.hypothesis.text.clone()),
        None,
    )
}

pub fn sentence_comet(
    backend: &Backend,
    weights: &RegressorWeights,
    source: &str,
    hypothesis: &str,
    reference: &str,
) -> Result<f64, MetricError> {
    comet_units(
        backend,
        weights,
        &TextUnits::single(source),
        &TextUnits::single(hypothesis),
        Some(&TextUnits::single(reference)),
    )
}

pub fn sentence_comet_qe(
    backend: &Backend,
    weights: &RegressorWeights,
    source: &str,
    hypothesis: &str,
) -> Result<f64, MetricError> {
    require_reference_free(weights)?;
    comet_units(
        backend,
        weights,
        &TextUnits::single(source),
        &TextUnits::single(hypothesis),
        None,
    )
}

#[derive(Debug, Clone)]
pub struct DocComet {
    pub backend: Backend,
    pub weights: std::sync::Arc<RegressorWeights>,
    pub config: CometConfig,
}

impl SegmentMetric for DocComet {
    fn name(&self) -> &str {
        "doc-comet"
    }

    fn score(&self, input: &ScoringInput) -> Result<f64, MetricError> {
        comet_score(input, &self.backend, &self.weights, &self.config)
    }
}

#[derive(Debug, Clone)]
pub struct DocCometQe {
    pub backend: Backend,
    pub weights: std::sync::Arc<RegressorWeights>,
    pub config: CometConfig,
}

impl DocCometQe {
    pub fn new(
        backend: Backend,
        weights: std::sync::Arc<RegressorWeights>,
        config: CometConfig,
    ) -> Result<Self, MetricError> {
        require_reference_free(&weights)?;
        Ok(Self {
            backend,
            weights,
            config,
        })
    }
}

impl SegmentMetric for DocCometQe {
    fn name(&self) -> &str {
        "doc-comet-qe"
    }

    fn score(&self, input: &ScoringInput) -> Result<f64, MetricError> {
        comet_qe_score(input, &self.backend, &self.weights, &self.config)
    }
}

impl ReferenceFreeScorer for DocCometQe {
    /// Context is taken from the units themselves, trimmed to `n_ctx`.
    fn score_candidate(&self, source: &TextUnits, candidate: &TextUnits) -> Result<f64, MetricError> {
        let trim = |t: &TextUnits| {
            let ctx = t.context();
            let keep = self.config.n_ctx.min(ctx.len());
            let mut units = ctx[ctx.len() - keep..].to_vec();
            units.push(t.focus().to_string());
            TextUnits::new(units)
        };
        comet_units(&self.backend, &self.weights, &trim(source)?, &trim(candidate)?, None)
    }
}
