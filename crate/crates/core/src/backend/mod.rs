//! The inference-provider contract.
//!
//! The core never tokenizes. It sends lists of sentence units (context
//! sentences followed by one sentence of interest) and receives either
//! per-token vectors with unit spans, or log-probabilities for the decoder's
//! focus tokens. Joining units with model-specific separators is the
//! provider's job, and so is reporting which token positions belong to which
//! unit.

mod cache;
pub mod conformance;
mod mock;
mod wire;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ContextWindow;

pub use cache::{cached, CachedProvider};
pub use mock::{ConditionalTable, ContextSensitivity, LogProbModel, MockProvider};
pub use wire::{decode_response, encode_response, serve, WireProvider};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("input needs {tokens} tokens but the provider accepts at most {budget}")]
    Capacity { tokens: usize, budget: usize },
    #[error("provider does not support {0}")]
    Unsupported(Capability),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("provider error [{code}]: {message}")]
    Remote { code: String, message: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Wire error code for this error.
    pub fn code(&self) -> &str {
        match self {
            BackendError::Capacity { .. } => "capacity",
            BackendError::Unsupported(_) => "unsupported",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::Remote { code, .. } => code,
            _ => "internal",
        }
    }

    pub fn is_capacity(&self) -> bool {
        self.code() == "capacity"
    }
}

/// Context sentences followed by exactly one sentence of interest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextUnits {
    units: Vec<String>,
}

impl TextUnits {
    pub fn new(units: Vec<String>) -> Result<Self, BackendError> {
        if units.is_empty() {
            return Err(BackendError::InvalidRequest(
                "text units must contain the sentence of interest".to_string(),
            ));
        }
        Ok(Self { units })
    }

    pub fn single(focus: impl Into<String>) -> Self {
        Self {
            units: vec![focus.into()],
        }
    }

    pub fn with_context(context: &ContextWindow, focus: impl Into<String>) -> Self {
        let mut units = context.sentences().to_vec();
        units.push(focus.into());
        Self { units }
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn focus_index(&self) -> usize {
        self.units.len() - 1
    }

    pub fn focus(&self) -> &str {
        &self.units[self.focus_index()]
    }

    pub fn context(&self) -> &[String] {
        &self.units[..self.focus_index()]
    }

    /// Drops the oldest context unit, or returns `None` when only the focus is left.
    pub fn drop_oldest(&self) -> Option<TextUnits> {
        (self.units.len() > 1).then(|| TextUnits {
            units: self.units[1..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Hypothesis,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Embed,
    #[serde(rename = "seqscore")]
    SeqScore,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Embed => "embed",
            Capability::SeqScore => "seqscore",
        })
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Per-token vectors for a whole encoded input plus the token range of each unit.
///
/// Positions outside every span are provider-inserted special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    vectors: Array2<f64>,
    unit_spans: Vec<Span>,
    pieces: Option<Vec<String>>,
}

impl TokenEmbeddings {
    pub fn new(
        vectors: Array2<f64>,
        unit_spans: Vec<Span>,
        pieces: Option<Vec<String>>,
    ) -> Result<Self, BackendError> {
        let invalid = |m: String| Err(BackendError::InvalidResponse(m));
        let num_tokens = vectors.nrows();
        let Some(focus) = unit_spans.last() else {
            return invalid("embedding response has no unit spans".to_string());
        };
        if focus.is_empty() {
            return invalid("focus span is empty".to_string());
        }
        let mut cursor = 0;
        for span in &unit_spans {
            if span.start < cursor || span.end < span.start {
                return invalid(format!(
                    "unit spans overlap or are out of order at [{}, {})",
                    span.start, span.end
                ));
            }
            cursor = span.end;
        }
        if cursor > num_tokens {
            return invalid(format!(
                "span end {cursor} exceeds token count {num_tokens}"
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite embedding value".to_string());
        }
        if let Some(p) = &pieces {
            if p.len() != num_tokens {
                return invalid(format!(
                    "{} token pieces for {num_tokens} tokens",
                    p.len()
                ));
            }
        }
        Ok(Self {
            vectors,
            unit_spans,
            pieces,
        })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn unit_spans(&self) -> &[Span] {
        &self.unit_spans
    }

    pub fn focus_span(&self) -> Span {
        *self.unit_spans.last().expect("validated on construction")
    }

    /// Rows of the sentence of interest only.
    pub fn focus_rows(&self) -> ArrayView2<'_, f64> {
        let span = self.focus_span();
        self.vectors.slice(ndarray::s![span.start..span.end, ..])
    }

    /// Token strings of the focus span, when the provider reports them.
    pub fn focus_pieces(&self) -> Option<&[String]> {
        let span = self.focus_span();
        self.pieces.as_deref().map(|p| &p[span.start..span.end])
    }

    pub fn pieces(&self) -> Option<&[String]> {
        self.pieces.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_tokens(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Log-probabilities of the decoder focus tokens under teacher forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs {
    logprobs: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(logprobs: Vec<f64>) -> Result<Self, BackendError> {
        if logprobs.is_empty() {
            return Err(BackendError::InvalidResponse(
                "no log-probabilities for the focus sentence".to_string(),
            ));
        }
        if let Some(bad) = logprobs.iter().find(|&&lp| lp.is_nan() || lp > 0.0) {
            return Err(BackendError::InvalidResponse(format!(
                "log-probability {bad} is not a finite non-positive number"
            )));
        }
        Ok(Self { logprobs })
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn focus_token_count(&self) -> usize {
        self.logprobs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub max_tokens: usize,
    /// Zero when embeddings are not supported.
    pub embedding_dim: usize,
    pub supports: BTreeSet<Capability>,
}

impl ProviderDescriptor {
    pub fn supports(&self, capability: Capability) -> bool {
        self.supports.contains(&capability)
    }
}

/// One provider request. Serializes to the wire's `kind`/`payload` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Request {
    Describe,
    Count {
        units: Vec<String>,
    },
    Embed {
        units: Vec<String>,
        role: Role,
    },
    #[serde(rename = "seqscore")]
    SeqScore {
        encoder_units: Vec<String>,
        decoder_units: Vec<String>,
        decoder_focus: usize,
    },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Describe => "describe",
            Request::Count { .. } => "count",
            Request::Embed { .. } => "embed",
            Request::SeqScore { .. } => "seqscore",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Describe(ProviderDescriptor),
    Count(usize),
    Embed(TokenEmbeddings),
    SeqScore(TokenLogProbs),
}

/// Anything that answers provider requests: mocks, wire clients, caches.
pub trait Provider: Send + Sync {
    fn handle(&self, request: &Request) -> Result<Response, BackendError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        (**self).handle(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        (**self).handle(request)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        (**self).handle(request)
    }
}

fn unexpected(kind: &str, response: &Response) -> BackendError {
    BackendError::Protocol(format!(
        "expected a {kind} response, got {:?}",
        std::mem::discriminant(response)
    ))
}

/// Drops whole context units, oldest first, until `count` reports a fit.
///
/// The focus sentence is never dropped or shortened; if it alone is over
/// budget the result is a capacity error.
pub fn truncate_for_capacity<F>(
    text: &TextUnits,
    budget: usize,
    mut count: F,
) -> Result<TextUnits, BackendError>
where
    F: FnMut(&TextUnits) -> Result<usize, BackendError>,
{
    let mut current = text.clone();
    loop {
        let tokens = count(&current)?;
        if tokens <= budget {
            return Ok(current);
        }
        match current.drop_oldest() {
            Some(shorter) => current = shorter,
            None => return Err(BackendError::Capacity { tokens, budget }),
        }
    }
}

/// A provider paired with its descriptor, exposing typed, validated calls.
#[derive(Clone)]
pub struct Backend {
    provider: Arc<dyn Provider>,
    descriptor: ProviderDescriptor,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

impl Backend {
    pub fn connect(provider: impl Provider + 'static) -> Result<Self, BackendError> {
        Self::from_arc(Arc::new(provider))
    }

    pub fn from_arc(provider: Arc<dyn Provider>) -> Result<Self, BackendError> {
        let descriptor = match provider.handle(&Request::Describe)? {
            Response::Describe(d) => d,
            other => return Err(unexpected("describe", &other)),
        };
        if descriptor.max_tokens == 0 {
            return Err(BackendError::InvalidResponse(
                "provider reports max_tokens = 0".to_string(),
            ));
        }
        if descriptor.supports(Capability::Embed) && descriptor.embedding_dim == 0 {
            return Err(BackendError::InvalidResponse(
                "provider supports embed but reports embedding_dim = 0".to_string(),
            ));
        }
        Ok(Self {
            provider,
            descriptor,
        })
    }

    pub fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn require(&self, capability: Capability) -> Result<(), BackendError> {
        if self.descriptor.supports(capability) {
            Ok(())
        } else {
            Err(BackendError::Unsupported(capability))
        }
    }

    /// Token count of the joined input, special tokens included.
    pub fn count(&self, text: &TextUnits) -> Result<usize, BackendError> {
        match self.provider.handle(&Request::Count {
            units: text.units.clone(),
        })? {
            Response::Count(n) => Ok(n),
            other => Err(unexpected("count", &other)),
        }
    }

    pub fn fit(&self, text: &TextUnits) -> Result<TextUnits, BackendError> {
        truncate_for_capacity(text, self.descriptor.max_tokens, |t| self.count(t))
    }

    pub fn embed(&self, text: &TextUnits, role: Role) -> Result<TokenEmbeddings, BackendError> {
        self.require(Capability::Embed)?;
        let fitted = self.fit(text)?;
        let response = self.provider.handle(&Request::Embed {
            units: fitted.units.clone(),
            role,
        })?;
        let embeddings = match response {
            Response::Embed(e) => e,
            other => return Err(unexpected("embed", &other)),
        };
        if embeddings.unit_spans().len() != fitted.len() {
            return Err(BackendError::InvalidResponse(format!(
                "{} unit spans for {} units",
                embeddings.unit_spans().len(),
                fitted.len()
            )));
        }
        if embeddings.dim() != self.descriptor.embedding_dim {
            return Err(BackendError::InvalidResponse(format!(
                "embedding dim {} differs from advertised {}",
                embeddings.dim(),
                self.descriptor.embedding_dim
            )));
        }
        Ok(embeddings)
    }

    /// Teacher-forced log-probabilities of the decoder's focus sentence.
    ///
    /// Decoder context units act as a prompt and contribute no entries.
    pub fn forced_logprobs(
        &self,
        encoder: &TextUnits,
        decoder: &TextUnits,
    ) -> Result<TokenLogProbs, BackendError> {
        self.require(Capability::SeqScore)?;
        let encoder = self.fit(encoder)?;
        let decoder = self.fit(decoder)?;
        let response = self.provider.handle(&Request::SeqScore {
            encoder_units: encoder.units.clone(),
            decoder_focus: decoder.focus_index(),
            decoder_units: decoder.units,
        })?;
        match response {
            Response::SeqScore(lp) => Ok(lp),
            other => Err(unexpected("seqscore", &other)),
        }
    }
}

/// Opens a provider from a spec string.
///
/// * `mock:<free|mix>:<seed>` — deterministic in-process mock
/// * `tcp:<host:port>` or a bare socket address — wire protocol over TCP
/// * `unix:<path>` — wire protocol over a Unix socket
/// * `cmd:<command line>` or anything else — child process on standard pipes
pub fn open_provider(spec: &str) -> Result<Arc<dyn Provider>, BackendError> {
    if spec.starts_with("mock:") {
        return Ok(Arc::new(MockProvider::from_spec(spec)?));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Arc::new(WireProvider::connect_tcp(addr)?));
    }
    if let Some(path) = spec.strip_prefix("unix:") {
        return Ok(Arc::new(WireProvider::connect_unix(path)?));
    }
    if spec.parse::<std::net::SocketAddr>().is_ok() {
        return Ok(Arc::new(WireProvider::connect_tcp(spec)?));
    }
    let command = spec.strip_prefix("cmd:").unwrap_or(spec);
    Ok(Arc::new(WireProvider::spawn(command)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn units(items: &[&str]) -> TextUnits {
        TextUnits::new(items.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    // Estimate: one token per word plus one per unit.
    fn word_count(t: &TextUnits) -> Result<usize, BackendError> {
        Ok(t.units()
            .iter()
            .map(|u| u.split_whitespace().count() + 1)
            .sum())
    }

    #[test]
    fn truncation_keeps_newest_context() {
        let text = units(&["one two", "three four", "five six", "focus here"]);
        // focus (3) + one unit (3) fits in 6; two units would need 9.
        let kept = truncate_for_capacity(&text, 6, word_count).unwrap();
        assert_eq!(kept.units(), ["five six", "focus here"]);
        assert_eq!(kept.focus(), "focus here");
    }

    #[test]
    fn truncation_is_identity_when_fitting() {
        let text = units(&["focus"]);
        let calls = Cell::new(0);
        let kept = truncate_for_capacity(&text, 10, |t| {
            calls.set(calls.get() + 1);
            word_count(t)
        })
        .unwrap();
        assert_eq!(kept, text);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn truncation_never_shortens_focus() {
        let text = units(&["ctx", "a b c d e f"]);
        let err = truncate_for_capacity(&text, 4, word_count).unwrap_err();
        assert_eq!(err, BackendError::Capacity { tokens: 7, budget: 4 });
        assert!(err.is_capacity());
    }

    #[test]
    fn text_units_require_focus() {
        assert!(TextUnits::new(vec![]).is_err());
        let t = TextUnits::with_context(
            &ContextWindow::from_sentences(vec!["a".into(), "b".into()]),
            "c",
        );
        assert_eq!(t.focus_index(), 2);
        assert_eq!(t.context(), ["a", "b"]);
    }

    #[test]
    fn embeddings_reject_bad_spans() {
        let v = Array2::<f64>::ones((4, 2));
        assert!(TokenEmbeddings::new(v.clone(), vec![Span::new(0, 2), Span::new(1, 3)], None).is_err());
        assert!(TokenEmbeddings::new(v.clone(), vec![Span::new(0, 2), Span::new(3, 3)], None).is_err());
        assert!(TokenEmbeddings::new(v.clone(), vec![Span::new(1, 5)], None).is_err());
        let ok = TokenEmbeddings::new(v, vec![Span::new(1, 2), Span::new(3, 4)], None).unwrap();
        assert_eq!(ok.focus_rows().nrows(), 1);
    }

    #[test]
    fn logprobs_must_be_non_positive() {
        assert!(TokenLogProbs::new(vec![-1.0, 0.5]).is_err());
        assert!(TokenLogProbs::new(vec![f64::NAN]).is_err());
        assert!(TokenLogProbs::new(vec![]).is_err());
        assert_eq!(TokenLogProbs::new(vec![0.0, -2.0]).unwrap().focus_token_count(), 2);
    }

    #[test]
    fn request_wire_shape() {
        let json = serde_json::to_value(Request::Embed {
            units: vec!["a".into()],
            role: Role::Reference,
        })
        .unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "embed", "payload": {"units": ["a"], "role": "reference"}})
        );
        let describe = serde_json::to_value(Request::Describe).unwrap();
        assert_eq!(describe, serde_json::json!({"kind": "describe"}));
    }

    #[test]
    fn backend_rejects_unsupported_capability() {
        let mock = MockProvider::context_free(1).with_capabilities([Capability::SeqScore]);
        let backend = Backend::connect(mock).unwrap();
        let err = backend.embed(&TextUnits::single("x"), Role::Reference).unwrap_err();
        assert_eq!(err, BackendError::Unsupported(Capability::Embed));
    }

    #[test]
    fn backend_truncates_context_before_embedding() {
        let mock = MockProvider::context_free(3).with_max_tokens(8);
        let backend = Backend::connect(mock).unwrap();
        // mock counts 1 + words + units: focus-only = 4, one ctx unit adds 3.
        let text = units(&["a b", "c d", "x y"]);
        let emb = backend.embed(&text, Role::Reference).unwrap();
        assert_eq!(emb.unit_spans().len(), 2);
        let err = backend
            .embed(&units(&["one two three four five six seven"]), Role::Reference)
            .unwrap_err();
        assert!(err.is_capacity());
    }
}
