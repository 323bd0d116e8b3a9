//! Deterministic in-process providers for tests and dry runs.
//!
//! Tokens are whitespace-separated words with punctuation split off. The
//! encoded sequence is `<s> unit0 </s> unit1 </s> ...`; the special tokens
//! belong to no unit span.
//!
//! Every output is a pure function of the seed and the request, so repeated
//! runs (and repeated processes) see identical numbers.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    BackendError, Capability, Provider, ProviderDescriptor, Request, Response, Span,
    TokenEmbeddings, TokenLogProbs,
};

const BOS: &str = "<s>";
const SEP: &str = "</s>";

const PRONOUNS: &[&str] = &[
    "it", "its", "they", "them", "he", "him", "she", "her", "er", "sie", "es", "il", "elle",
];
const DETERMINERS: &[&str] = &[
    "a", "an", "the", "ein", "eine", "der", "die", "das", "le", "la", "un", "une",
];

/// How context influences token representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSensitivity {
    /// A token's vector depends on the token string alone.
    Free,
    /// Vectors blend in a hash of the context units, and pronouns resolve to
    /// the most recent determiner-introduced noun before them.
    Mix,
}

/// Explicit `log p(token | previous token)` table for hand-checkable scoring.
///
/// The first decoder focus token is conditioned on the last prompt token, or
/// on `<s>` when there is no prompt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionalTable {
    entries: HashMap<(String, String), f64>,
}

impl ConditionalTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, previous: &str, token: &str, logprob: f64) -> Self {
        self.entries
            .insert((previous.to_string(), token.to_string()), logprob);
        self
    }

    pub fn get(&self, previous: &str, token: &str) -> Option<f64> {
        self.entries
            .get(&(previous.to_string(), token.to_string()))
            .copied()
    }

    pub fn start_token() -> &'static str {
        BOS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogProbModel {
    /// Tokens present in the encoder's focus sentence are likely; others get a
    /// seeded penalty. Under [`ContextSensitivity::Mix`] pronouns are resolved
    /// first and the context perturbs every value.
    Hashed,
    /// The same log-probability for every token.
    Uniform(f64),
    /// Looked up by the true previous token, prompt tokens included.
    Table(ConditionalTable),
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    id: String,
    seed: u64,
    sensitivity: ContextSensitivity,
    dim: usize,
    max_tokens: usize,
    mix_weight: f64,
    logprobs: LogProbModel,
    supports: BTreeSet<Capability>,
}

impl MockProvider {
    pub fn new(sensitivity: ContextSensitivity, seed: u64) -> Self {
        let mode = match sensitivity {
            ContextSensitivity::Free => "free",
            ContextSensitivity::Mix => "mix",
        };
        Self {
            id: format!("mock:{mode}:{seed}"),
            seed,
            sensitivity,
            dim: 16,
            max_tokens: 512,
            mix_weight: 0.5,
            logprobs: LogProbModel::Hashed,
            supports: [Capability::Embed, Capability::SeqScore].into(),
        }
    }

    pub fn context_free(seed: u64) -> Self {
        Self::new(ContextSensitivity::Free, seed)
    }

    pub fn context_mix(seed: u64) -> Self {
        Self::new(ContextSensitivity::Mix, seed)
    }

    /// Parses `mock:<free|mix>:<seed>`.
    pub fn from_spec(spec: &str) -> Result<Self, BackendError> {
        let bad = || {
            BackendError::InvalidRequest(format!(
                "invalid mock provider spec `{spec}` (expected mock:<free|mix>:<seed>)"
            ))
        };
        let mut parts = spec.split(':');
        if parts.next() != Some("mock") {
            return Err(bad());
        }
        let sensitivity = match parts.next() {
            Some("free") => ContextSensitivity::Free,
            Some("mix") => ContextSensitivity::Mix,
            _ => return Err(bad()),
        };
        let seed = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self::new(sensitivity, seed))
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_mix_weight(mut self, weight: f64) -> Self {
        self.mix_weight = weight;
        self
    }

    pub fn with_logprobs(mut self, model: LogProbModel) -> Self {
        self.logprobs = model;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_capabilities(mut self, caps: impl IntoIterator<Item = Capability>) -> Self {
        self.supports = caps.into_iter().collect();
        self
    }

    pub fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            provider_id: self.id.clone(),
            max_tokens: self.max_tokens,
            embedding_dim: if self.supports.contains(&Capability::Embed) {
                self.dim
            } else {
                0
            },
            supports: self.supports.clone(),
        }
    }

    fn count(&self, units: &[String]) -> usize {
        1 + units.iter().map(|u| tokenize(u).len()).sum::<usize>() + units.len()
    }

    fn check_capacity(&self, units: &[String]) -> Result<(), BackendError> {
        let tokens = self.count(units);
        if tokens > self.max_tokens {
            Err(BackendError::Capacity {
                tokens,
                budget: self.max_tokens,
            })
        } else {
            Ok(())
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = seeded_rng(self.seed, &["tok", token]);
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn embed(&self, units: &[String]) -> Result<TokenEmbeddings, BackendError> {
        if units.is_empty() {
            return Err(BackendError::InvalidRequest("no units to embed".to_string()));
        }
        self.check_capacity(units)?;
        let layout = Layout::new(units);
        let context = &units[..units.len() - 1];
        let blend = match self.sensitivity {
            ContextSensitivity::Mix if !context.is_empty() => {
                let mut parts = vec!["ctx"];
                parts.extend(context.iter().map(String::as_str));
                let mut rng = seeded_rng(self.seed, &parts);
                Some(
                    (0..self.dim)
                        .map(|_| self.mix_weight * rng.random_range(-1.0..1.0))
                        .collect::<Vec<f64>>(),
                )
            }
            _ => None,
        };
        let mut vectors = Array2::zeros((layout.tokens.len(), self.dim));
        for (position, token) in layout.tokens.iter().enumerate() {
            let lookup = match self.sensitivity {
                ContextSensitivity::Mix => resolve(&layout.tokens[..position], token),
                ContextSensitivity::Free => token.as_str(),
            };
            let mut v = self.token_vector(lookup);
            if let Some(b) = &blend {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            vectors.row_mut(position).assign(&ndarray::Array1::from(v));
        }
        TokenEmbeddings::new(vectors, layout.spans, Some(layout.tokens))
    }

    fn seqscore(
        &self,
        encoder_units: &[String],
        decoder_units: &[String],
        decoder_focus: usize,
    ) -> Result<TokenLogProbs, BackendError> {
        if encoder_units.is_empty() || decoder_units.is_empty() {
            return Err(BackendError::InvalidRequest(
                "encoder and decoder units must be non-empty".to_string(),
            ));
        }
        if decoder_focus + 1 != decoder_units.len() {
            return Err(BackendError::InvalidRequest(format!(
                "decoder_focus {decoder_focus} must be the last of {} units",
                decoder_units.len()
            )));
        }
        self.check_capacity(encoder_units)?;
        self.check_capacity(decoder_units)?;

        let decoder = Layout::new(decoder_units);
        let focus = decoder.spans[decoder_focus];
        let encoder = Layout::new(encoder_units);
        let encoder_focus = encoder.spans[encoder.spans.len() - 1];

        let logprobs = (focus.start..focus.end)
            .map(|position| {
                // The separator closing the prompt is not a conditioning token.
                let previous = decoder.tokens[..position]
                    .iter()
                    .rev()
                    .find(|t| t.as_str() != SEP)
                    .map(String::as_str)
                    .unwrap_or(BOS);
                let token = decoder.tokens[position].as_str();
                match &self.logprobs {
                    LogProbModel::Uniform(lp) => Ok(*lp),
                    LogProbModel::Table(table) => table.get(previous, token).ok_or_else(|| {
                        BackendError::InvalidRequest(format!(
                            "toy table has no entry for `{token}` after `{previous}`"
                        ))
                    }),
                    LogProbModel::Hashed => Ok(self.hashed_logprob(
                        &encoder,
                        encoder_focus,
                        &decoder.tokens[..position],
                        match self.sensitivity {
                            // Only tokens of the sentence itself condition the next one.
                            ContextSensitivity::Free if position == focus.start => BOS,
                            _ => previous,
                        },
                        token,
                        (encoder_units, decoder_units),
                    )),
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        TokenLogProbs::new(logprobs)
    }

    fn hashed_logprob(
        &self,
        encoder: &Layout,
        encoder_focus: Span,
        decoder_prefix: &[String],
        previous: &str,
        token: &str,
        (encoder_units, decoder_units): (&[String], &[String]),
    ) -> f64 {
        let noise = unit_interval(self.seed, &["lp", previous, token]);
        let (target, present) = match self.sensitivity {
            ContextSensitivity::Free => {
                let present = encoder.tokens[encoder_focus.start..encoder_focus.end]
                    .iter()
                    .any(|t| t == token);
                (token, present)
            }
            ContextSensitivity::Mix => {
                let target = resolve(decoder_prefix, token);
                let present = (encoder_focus.start..encoder_focus.end)
                    .any(|p| resolve(&encoder.tokens[..p], &encoder.tokens[p]) == target);
                (target, present)
            }
        };
        let base = if present {
            -0.05 - 0.2 * noise
        } else {
            -1.0 - 3.0 * noise
        };
        match self.sensitivity {
            ContextSensitivity::Free => base,
            ContextSensitivity::Mix => {
                let enc_ctx = &encoder_units[..encoder_units.len() - 1];
                let dec_ctx = &decoder_units[..decoder_units.len() - 1];
                if enc_ctx.is_empty() && dec_ctx.is_empty() {
                    return base;
                }
                let mut parts = vec!["lpctx", target];
                parts.extend(enc_ctx.iter().map(String::as_str));
                parts.push("|");
                parts.extend(dec_ctx.iter().map(String::as_str));
                base * (0.9 + 0.2 * unit_interval(self.seed, &parts))
            }
        }
    }
}

impl Provider for MockProvider {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        match request {
            Request::Describe => Ok(Response::Describe(self.descriptor())),
            Request::Count { units } => Ok(Response::Count(self.count(units))),
            Request::Embed { units, .. } => {
                if !self.supports.contains(&Capability::Embed) {
                    return Err(BackendError::Unsupported(Capability::Embed));
                }
                self.embed(units).map(Response::Embed)
            }
            Request::SeqScore {
                encoder_units,
                decoder_units,
                decoder_focus,
            } => {
                if !self.supports.contains(&Capability::SeqScore) {
                    return Err(BackendError::Unsupported(Capability::SeqScore));
                }
                self.seqscore(encoder_units, decoder_units, *decoder_focus)
                    .map(Response::SeqScore)
            }
        }
    }
}

struct Layout {
    tokens: Vec<String>,
    spans: Vec<Span>,
}

impl Layout {
    fn new(units: &[String]) -> Self {
        let mut tokens = vec![BOS.to_string()];
        let mut spans = Vec::with_capacity(units.len());
        for unit in units {
            let start = tokens.len();
            tokens.extend(tokenize(unit));
            spans.push(Span::new(start, tokens.len()));
            tokens.push(SEP.to_string());
        }
        Self { tokens, spans }
    }
}

/// Whitespace words with each punctuation character split into its own token.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '\'' || c == '-' {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// A pronoun stands for the most recent determiner-introduced noun before it.
fn resolve<'a>(preceding: &'a [String], token: &'a str) -> &'a str {
    if !PRONOUNS.contains(&token.to_lowercase().as_str()) {
        return token;
    }
    preceding
        .windows(2)
        .rev()
        .find(|w| DETERMINERS.contains(&w[0].to_lowercase().as_str()) && is_word(&w[1]))
        .map(|w| w[1].as_str())
        .unwrap_or(token)
}

fn is_word(token: &str) -> bool {
    token.chars().all(char::is_alphanumeric) && token != BOS && token != SEP
}

fn seed_bytes(seed: u64, parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}

fn seeded_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(seed, parts))
}

fn unit_interval(seed: u64, parts: &[&str]) -> f64 {
    seeded_rng(seed, parts).random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, Role, TextUnits};

    fn units(items: &[&str]) -> TextUnits {
        TextUnits::new(items.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("It was old."), ["It", "was", "old", "."]);
        assert_eq!(tokenize("  a,b  "), ["a", ",", "b"]);
    }

    #[test]
    fn spans_skip_special_tokens() {
        let backend = Backend::connect(MockProvider::context_free(1)).unwrap();
        let emb = backend.embed(&units(&["a b", "c", "d e f"]), Role::Source).unwrap();
        let spans = emb.unit_spans();
        assert_eq!(spans, [Span::new(1, 3), Span::new(4, 5), Span::new(6, 9)]);
        assert_eq!(emb.num_tokens(), 10);
        let real: usize = spans.iter().map(Span::len).sum();
        // <s> and three </s>
        assert_eq!(real, emb.num_tokens() - 4);
        assert_eq!(emb.focus_pieces().unwrap(), ["d", "e", "f"]);
    }

    #[test]
    fn context_free_focus_vectors_ignore_context() {
        let backend = Backend::connect(MockProvider::context_free(5)).unwrap();
        let with = backend.embed(&units(&["a b", "c d"]), Role::Reference).unwrap();
        let without = backend.embed(&units(&["c d"]), Role::Reference).unwrap();
        assert_eq!(with.focus_rows(), without.focus_rows());
    }

    #[test]
    fn context_mix_focus_vectors_depend_on_context() {
        let backend = Backend::connect(MockProvider::context_mix(5)).unwrap();
        let with = backend.embed(&units(&["a b", "c d"]), Role::Reference).unwrap();
        let without = backend.embed(&units(&["c d"]), Role::Reference).unwrap();
        assert_ne!(with.focus_rows(), without.focus_rows());
    }

    #[test]
    fn mix_resolves_pronoun_to_antecedent() {
        let backend = Backend::connect(MockProvider::context_mix(9).with_mix_weight(0.0)).unwrap();
        let pronoun = backend
            .embed(&units(&["I bought a table .", "it"]), Role::Reference)
            .unwrap();
        let noun = backend.embed(&units(&["table"]), Role::Reference).unwrap();
        assert_eq!(pronoun.focus_rows(), noun.focus_rows());
    }

    #[test]
    fn uniform_logprobs_cover_focus_only() {
        let mock = MockProvider::context_free(0).with_logprobs(LogProbModel::Uniform(-2.0));
        let backend = Backend::connect(mock).unwrap();
        let lp = backend
            .forced_logprobs(&units(&["x"]), &units(&["p q r s t u v", "a b c d e"]))
            .unwrap();
        assert_eq!(lp.logprobs(), [-2.0; 5]);
    }

    #[test]
    fn table_logprobs_follow_previous_token() {
        let table = ConditionalTable::new()
            .with("<s>", "a", -0.5)
            .with("a", "b", -1.5)
            .with("c", "a", -0.25);
        let mock = MockProvider::context_free(0).with_logprobs(LogProbModel::Table(table));
        let backend = Backend::connect(mock).unwrap();
        let enc = units(&["z"]);
        assert_eq!(
            backend.forced_logprobs(&enc, &units(&["a b"])).unwrap().logprobs(),
            [-0.5, -1.5]
        );
        assert_eq!(
            backend.forced_logprobs(&enc, &units(&["c", "a b"])).unwrap().logprobs(),
            [-0.25, -1.5]
        );
        assert!(backend.forced_logprobs(&enc, &units(&["b"])).is_err());
    }

    #[test]
    fn hashed_logprobs_reward_copied_tokens() {
        let backend = Backend::connect(MockProvider::context_free(4)).unwrap();
        let same = backend
            .forced_logprobs(&units(&["the cat sat"]), &units(&["the cat sat"]))
            .unwrap();
        let other = backend
            .forced_logprobs(&units(&["the cat sat"]), &units(&["a dog ran"]))
            .unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(same.logprobs()) > mean(other.logprobs()));
        assert!(same.logprobs().iter().all(|&lp| lp <= 0.0));
    }

    #[test]
    fn mock_is_deterministic() {
        let a = MockProvider::context_mix(11);
        let b = MockProvider::context_mix(11);
        let req = Request::Embed {
            units: vec!["ctx here".into(), "focus words".into()],
            role: Role::Hypothesis,
        };
        assert_eq!(a.handle(&req).unwrap(), b.handle(&req).unwrap());
        let c = MockProvider::context_mix(12);
        assert_ne!(a.handle(&req).unwrap(), c.handle(&req).unwrap());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(MockProvider::from_spec("mock:mix:42").unwrap().seed, 42);
        assert!(MockProvider::from_spec("mock:other:1").is_err());
        assert!(MockProvider::from_spec("mock:free").is_err());
        assert!(MockProvider::from_spec("mock:free:1:2").is_err());
    }

    #[test]
    fn mock_reports_capacity() {
        let mock = MockProvider::context_free(0).with_max_tokens(3);
        let err = mock
            .handle(&Request::Embed {
                units: vec!["a b c".into()],
                role: Role::Source,
            })
            .unwrap_err();
        assert!(err.is_capacity());
    }
}
