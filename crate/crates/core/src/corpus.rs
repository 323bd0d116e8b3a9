//! Aligned document corpora, human judgments and contrastive test sets.
//!
//! Everything here is immutable once loaded. Context windows never cross a
//! document boundary: a segment near the start of a document simply gets
//! fewer context sentences.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tsv;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("alignment mismatch in document `{doc_id}`: {message}")]
    Alignment { doc_id: String, message: String },
    #[error("segment index {index} out of range for document `{doc_id}` with {len} segments")]
    Range {
        doc_id: String,
        index: usize,
        len: usize,
    },
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("invalid document `{doc_id}`: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("invalid contrastive example: {0}")]
    InvalidExample(String),
    #[error("duplicate MQM entry for ({system}, {doc_id}, {index})")]
    DuplicateJudgment {
        system: String,
        doc_id: String,
        index: usize,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
}

impl Segment {
    pub fn new(
        doc_id: impl Into<String>,
        index: usize,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::InvalidDocument {
                doc_id,
                message: format!("segment {index} has empty text"),
            });
        }
        Ok(Self {
            doc_id,
            index,
            text,
        })
    }
}

/// An ordered run of segments sharing one `doc_id`, indexed `0..len` without gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    segments: Vec<Segment>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, segments: Vec<Segment>) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        if segments.is_empty() {
            return Err(CorpusError::InvalidDocument {
                doc_id,
                message: "document has no segments".to_string(),
            });
        }
        for (position, segment) in segments.iter().enumerate() {
            if segment.doc_id != doc_id {
                return Err(CorpusError::InvalidDocument {
                    doc_id,
                    message: format!("contains a segment of document `{}`", segment.doc_id),
                });
            }
            if segment.index != position {
                return Err(CorpusError::InvalidDocument {
                    doc_id,
                    message: format!(
                        "expected segment index {position}, found {}",
                        segment.index
                    ),
                });
            }
        }
        Ok(Self { doc_id, segments })
    }

    /// Builds a document from plain sentences, numbering them from zero.
    pub fn from_sentences<S: Into<String>>(
        doc_id: impl Into<String>,
        sentences: impl IntoIterator<Item = S>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        let segments = sentences
            .into_iter()
            .enumerate()
            .map(|(i, s)| Segment::new(doc_id.clone(), i, s))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(doc_id, segments)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, index: usize) -> Result<&Segment, CorpusError> {
        self.segments.get(index).ok_or_else(|| CorpusError::Range {
            doc_id: self.doc_id.clone(),
            index,
            len: self.segments.len(),
        })
    }
}

/// Prior sentences of one side of a document, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextWindow {
    sentences: Vec<String>,
    requested_size: usize,
}

impl ContextWindow {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A window holding exactly `sentences`, as when context comes from a test-set file.
    pub fn from_sentences(sentences: Vec<String>) -> Self {
        let requested_size = sentences.len();
        Self {
            sentences,
            requested_size,
        }
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn requested_size(&self) -> usize {
        self.requested_size
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The newest `n` sentences of this window.
    pub fn tail(&self, n: usize) -> ContextWindow {
        let keep = n.min(self.sentences.len());
        ContextWindow {
            sentences: self.sentences[self.sentences.len() - keep..].to_vec(),
            requested_size: n,
        }
    }
}

/// Returns the `min(n, index)` sentences immediately preceding `index`.
pub fn build_context(doc: &Document, index: usize, n: usize) -> Result<ContextWindow, CorpusError> {
    doc.segment(index)?;
    let start = index.saturating_sub(n);
    Ok(ContextWindow {
        sentences: doc.segments[start..index]
            .iter()
            .map(|s| s.text.clone())
            .collect(),
        requested_size: n,
    })
}

/// Which context accompanies the hypothesis sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Prior reference sentences, shared with the reference side.
    #[default]
    Reference,
    /// The system's own prior output.
    Hypothesis,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Reference => "reference",
            ContextMode::Hypothesis => "hypothesis",
        })
    }
}

impl FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(ContextMode::Reference),
            "hypothesis" => Ok(ContextMode::Hypothesis),
            other => Err(format!(
                "unknown context mode `{other}` (expected reference or hypothesis)"
            )),
        }
    }
}

/// Source, hypothesis and reference sentences of one segment with their context.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringInput {
    pub source: Segment,
    pub hypothesis: Segment,
    pub reference: Segment,
    pub source_ctx: ContextWindow,
    /// Context used for the hypothesis in reference-based metrics; depends on `ctx_mode`.
    pub hyp_side_ctx: ContextWindow,
    pub ref_ctx: ContextWindow,
    /// The system's own prior output, whatever the mode. Reference-free metrics read this.
    pub hyp_own_ctx: ContextWindow,
    pub ctx_mode: ContextMode,
}

impl ScoringInput {
    /// A context-free input, as a sentence-level metric sees it.
    pub fn sentence(source: Segment, hypothesis: Segment, reference: Segment) -> Self {
        Self {
            source,
            hypothesis,
            reference,
            source_ctx: ContextWindow::empty(),
            hyp_side_ctx: ContextWindow::empty(),
            ref_ctx: ContextWindow::empty(),
            hyp_own_ctx: ContextWindow::empty(),
            ctx_mode: ContextMode::Reference,
        }
    }
}

/// Source, reference and per-system output documents with identical structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    source_docs: Vec<Document>,
    reference_docs: Vec<Document>,
    system_outputs: BTreeMap<String, Vec<Document>>,
    doc_positions: HashMap<String, usize>,
}

impl ParallelCorpus {
    /// Validates alignment and reorders every side to the source document order.
    pub fn new(
        source_docs: Vec<Document>,
        reference_docs: Vec<Document>,
        system_outputs: BTreeMap<String, Vec<Document>>,
    ) -> Result<Self, CorpusError> {
        let mut doc_positions = HashMap::new();
        for (position, doc) in source_docs.iter().enumerate() {
            if doc_positions.insert(doc.doc_id.clone(), position).is_some() {
                return Err(CorpusError::Alignment {
                    doc_id: doc.doc_id.clone(),
                    message: "document appears twice on the source side".to_string(),
                });
            }
        }
        let align = |side: &str, docs: Vec<Document>| -> Result<Vec<Document>, CorpusError> {
            let mut slots: Vec<Option<Document>> = vec![None; source_docs.len()];
            for doc in docs {
                let Some(&position) = doc_positions.get(&doc.doc_id) else {
                    return Err(CorpusError::Alignment {
                        doc_id: doc.doc_id.clone(),
                        message: format!("present on the {side} side but not in the source"),
                    });
                };
                let expected = source_docs[position].len();
                if doc.len() != expected {
                    return Err(CorpusError::Alignment {
                        doc_id: doc.doc_id.clone(),
                        message: format!(
                            "{side} has {} segments, source has {expected}",
                            doc.len()
                        ),
                    });
                }
                if slots[position].is_some() {
                    return Err(CorpusError::Alignment {
                        doc_id: doc.doc_id.clone(),
                        message: format!("document appears twice on the {side} side"),
                    });
                }
                slots[position] = Some(doc);
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(position, slot)| {
                    slot.ok_or_else(|| CorpusError::Alignment {
                        doc_id: source_docs[position].doc_id.clone(),
                        message: format!("missing on the {side} side"),
                    })
                })
                .collect()
        };
        let reference_docs = align("reference", reference_docs)?;
        let system_outputs = system_outputs
            .into_iter()
            .map(|(name, docs)| {
                let side = format!("system `{name}`");
                align(&side, docs).map(|docs| (name, docs))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        Ok(Self {
            source_docs,
            reference_docs,
            system_outputs,
            doc_positions,
        })
    }

    pub fn source_docs(&self) -> &[Document] {
        &self.source_docs
    }

    pub fn reference_docs(&self) -> &[Document] {
        &self.reference_docs
    }

    pub fn system_names(&self) -> impl Iterator<Item = &str> {
        self.system_outputs.keys().map(String::as_str)
    }

    pub fn system_docs(&self, system: &str) -> Result<&[Document], CorpusError> {
        self.system_outputs
            .get(system)
            .map(Vec::as_slice)
            .ok_or_else(|| CorpusError::UnknownSystem(system.to_string()))
    }

    fn position(&self, doc_id: &str) -> Result<usize, CorpusError> {
        self.doc_positions
            .get(doc_id)
            .copied()
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.to_string()))
    }

    /// Every `(doc_id, index)` in document order.
    pub fn segment_keys(&self) -> Vec<(String, usize)> {
        self.source_docs
            .iter()
            .flat_map(|doc| (0..doc.len()).map(move |i| (doc.doc_id.clone(), i)))
            .collect()
    }
}

pub fn make_scoring_input(
    corpus: &ParallelCorpus,
    system: &str,
    doc_id: &str,
    index: usize,
    n: usize,
    ctx_mode: ContextMode,
) -> Result<ScoringInput, CorpusError> {
    let position = corpus.position(doc_id)?;
    let source_doc = &corpus.source_docs[position];
    let reference_doc = &corpus.reference_docs[position];
    let system_doc = &corpus.system_docs(system)?[position];

    let ref_ctx = build_context(reference_doc, index, n)?;
    let hyp_own_ctx = build_context(system_doc, index, n)?;
    let hyp_side_ctx = match ctx_mode {
        ContextMode::Reference => ref_ctx.clone(),
        ContextMode::Hypothesis => hyp_own_ctx.clone(),
    };
    Ok(ScoringInput {
        source: source_doc.segment(index)?.clone(),
        hypothesis: system_doc.segment(index)?.clone(),
        reference: reference_doc.segment(index)?.clone(),
        source_ctx: build_context(source_doc, index, n)?,
        hyp_side_ctx,
        ref_ctx,
        hyp_own_ctx,
        ctx_mode,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    source: PathBuf,
    reference: PathBuf,
    systems: BTreeMap<String, PathBuf>,
}

/// Loads a corpus from a TOML manifest naming one segment file per side.
///
/// Relative paths in the manifest resolve against the manifest's directory.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<ParallelCorpus, CorpusError> {
    let manifest_path = manifest_path.as_ref();
    let raw = fs::read_to_string(manifest_path).map_err(io_error(manifest_path))?;
    let manifest: Manifest = toml::from_str(&raw).map_err(|e| CorpusError::Parse {
        path: manifest_path.to_path_buf(),
        line: e
            .span()
            .map(|span| raw[..span.start].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let source = read_segments(&base.join(&manifest.source))?;
    let reference = read_segments(&base.join(&manifest.reference))?;
    let systems = manifest
        .systems
        .iter()
        .map(|(name, path)| Ok((name.clone(), read_segments(&base.join(path))?)))
        .collect::<Result<BTreeMap<_, _>, CorpusError>>()?;
    ParallelCorpus::new(source, reference, systems)
}

/// Writes `corpus` as `manifest.toml` plus one segment file per side into `dir`.
pub fn write_corpus(corpus: &ParallelCorpus, dir: impl AsRef<Path>) -> Result<PathBuf, CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut systems = BTreeMap::new();
    write_segments(&dir.join("source.tsv"), &corpus.source_docs)?;
    write_segments(&dir.join("reference.tsv"), &corpus.reference_docs)?;
    for (i, (name, docs)) in corpus.system_outputs.iter().enumerate() {
        let file = PathBuf::from(format!("system-{i}.tsv"));
        write_segments(&dir.join(&file), docs)?;
        systems.insert(name.clone(), file);
    }
    let manifest = Manifest {
        source: "source.tsv".into(),
        reference: "reference.tsv".into(),
        systems,
    };
    let manifest_path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_error(&manifest_path))?;
    Ok(manifest_path)
}

/// Reads `doc_id<TAB>index<TAB>text` lines. Blank lines and `#` comments are skipped.
pub fn read_segments(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(io_error(path))?;
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Segment>> = HashMap::new();
    for (lineno, line) in numbered_records(&raw) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let doc_id = tsv::unescape(fields[0]).map_err(|m| parse_err(lineno, m))?;
        let index: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid segment index `{}`", fields[1])))?;
        let text = tsv::unescape(fields[2]).map_err(|m| parse_err(lineno, m))?;
        let segment =
            Segment::new(doc_id.clone(), index, text).map_err(|e| parse_err(lineno, e.to_string()))?;
        let bucket = grouped.entry(doc_id.clone()).or_insert_with(|| {
            order.push(doc_id.clone());
            Vec::new()
        });
        bucket.push(segment);
    }
    order
        .into_iter()
        .map(|doc_id| {
            let mut segments = grouped.remove(&doc_id).unwrap_or_default();
            segments.sort_by_key(|s| s.index);
            Document::new(doc_id, segments)
        })
        .collect()
}

pub fn write_segments(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for doc in docs {
        for segment in &doc.segments {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                tsv::escape(&segment.doc_id),
                segment.index,
                tsv::escape(&segment.text)
            ));
        }
    }
    fs::write(path, out).map_err(io_error(path))
}

fn numbered_records(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.strip_suffix('\r').unwrap_or(line)))
        .filter(|(_, line)| !line.trim().is_empty() && !line.starts_with('#'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    HigherBetter,
    /// Error penalties such as MQM.
    LowerBetter,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::HigherBetter => "higher-better",
            Polarity::LowerBetter => "lower-better",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqmEntry {
    pub system: String,
    pub doc_id: String,
    pub index: usize,
    pub score: f64,
}

/// Segment-level human judgments with a single polarity.
#[derive(Debug, Clone)]
pub struct MqmTable {
    entries: Vec<MqmEntry>,
    polarity: Polarity,
    lookup: HashMap<(String, String, usize), usize>,
}

impl MqmTable {
    pub fn new(entries: Vec<MqmEntry>, polarity: Polarity) -> Result<Self, CorpusError> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let key = (e.system.clone(), e.doc_id.clone(), e.index);
            if lookup.insert(key, i).is_some() {
                return Err(CorpusError::DuplicateJudgment {
                    system: e.system.clone(),
                    doc_id: e.doc_id.clone(),
                    index: e.index,
                });
            }
        }
        Ok(Self {
            entries,
            polarity,
            lookup,
        })
    }

    pub fn entries(&self) -> &[MqmEntry] {
        &self.entries
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// The raw score as stored.
    pub fn get(&self, system: &str, doc_id: &str, index: usize) -> Option<f64> {
        self.lookup
            .get(&(system.to_string(), doc_id.to_string(), index))
            .map(|&i| self.entries[i].score)
    }

    /// The score oriented so that higher is better.
    pub fn oriented(&self, system: &str, doc_id: &str, index: usize) -> Option<f64> {
        self.get(system, doc_id, index).map(|s| match self.polarity {
            Polarity::HigherBetter => s,
            Polarity::LowerBetter => -s,
        })
    }

    pub fn has_system(&self, system: &str) -> bool {
        self.entries.iter().any(|e| e.system == system)
    }

    /// Negates every score and flips the polarity. Oriented scores are unchanged.
    pub fn negated(&self) -> Self {
        let polarity = match self.polarity {
            Polarity::HigherBetter => Polarity::LowerBetter,
            Polarity::LowerBetter => Polarity::HigherBetter,
        };
        let entries = self
            .entries
            .iter()
            .map(|e| MqmEntry {
                score: -e.score,
                ..e.clone()
            })
            .collect();
        Self {
            entries,
            polarity,
            lookup: self.lookup.clone(),
        }
    }
}

/// Reads `system<TAB>doc_id<TAB>index<TAB>score` lines.
///
/// Polarity defaults to lower-better (MQM penalties) and can be declared with a
/// `# polarity: higher-better` header line.
pub fn load_mqm(path: impl AsRef<Path>) -> Result<MqmTable, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(io_error(path))?;
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut polarity = Polarity::LowerBetter;
    for (i, line) in raw.lines().enumerate() {
        if let Some(value) = line.strip_prefix('#').and_then(|rest| {
            rest.trim()
                .strip_prefix("polarity:")
                .map(|v| v.trim().to_string())
        }) {
            polarity = match value.as_str() {
                "higher-better" => Polarity::HigherBetter,
                "lower-better" => Polarity::LowerBetter,
                other => return Err(parse_err(i + 1, format!("unknown polarity `{other}`"))),
            };
        }
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in numbered_records(&raw) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let system = tsv::unescape(fields[0]).map_err(|m| parse_err(lineno, m))?;
        let doc_id = tsv::unescape(fields[1]).map_err(|m| parse_err(lineno, m))?;
        let index: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid segment index `{}`", fields[2])))?;
        let score: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid score `{}`", fields[3])))?;
        if !score.is_finite() {
            return Err(parse_err(lineno, format!("non-finite score `{}`", fields[3])));
        }
        if !seen.insert((system.clone(), doc_id.clone(), index)) {
            return Err(parse_err(
                lineno,
                format!("duplicate entry for ({system}, {doc_id}, {index})"),
            ));
        }
        entries.push(MqmEntry {
            system,
            doc_id,
            index,
            score,
        });
    }
    MqmTable::new(entries, polarity)
}

pub fn write_mqm(path: impl AsRef<Path>, table: &MqmTable) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = format!("# polarity: {}\n", table.polarity);
    for e in &table.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            tsv::escape(&e.system),
            tsv::escape(&e.doc_id),
            e.index,
            e.score
        ));
    }
    fs::write(path, out).map_err(io_error(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phenomenon {
    Pronoun,
    Wsd,
}

impl FromStr for Phenomenon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pronoun" => Ok(Phenomenon::Pronoun),
            "wsd" => Ok(Phenomenon::Wsd),
            other => Err(format!("unknown phenomenon `{other}`")),
        }
    }
}

impl fmt::Display for Phenomenon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phenomenon::Pronoun => "pronoun",
            Phenomenon::Wsd => "wsd",
        })
    }
}

/// Where the disambiguating antecedent sits relative to the sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distance {
    Intra,
    Inter,
    Unknown,
}

impl FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intra" => Ok(Distance::Intra),
            "inter" => Ok(Distance::Inter),
            "" | "unknown" => Ok(Distance::Unknown),
            other => Err(format!("unknown distance `{other}`")),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Intra => "intra",
            Distance::Inter => "inter",
            Distance::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveExample {
    pub source_ctx: ContextWindow,
    pub source: String,
    pub target_ctx: ContextWindow,
    pub correct: String,
    pub contrastive: Vec<String>,
    pub phenomenon: Phenomenon,
    pub distance: Distance,
}

impl ContrastiveExample {
    pub fn new(
        source_ctx: Vec<String>,
        source: impl Into<String>,
        target_ctx: Vec<String>,
        correct: impl Into<String>,
        contrastive: Vec<String>,
        phenomenon: Phenomenon,
        distance: Distance,
    ) -> Result<Self, CorpusError> {
        let correct = correct.into();
        if contrastive.is_empty() {
            return Err(CorpusError::InvalidExample(
                "at least one contrastive translation is required".to_string(),
            ));
        }
        if contrastive.contains(&correct) {
            return Err(CorpusError::InvalidExample(format!(
                "correct translation `{correct}` also listed as contrastive"
            )));
        }
        Ok(Self {
            source_ctx: ContextWindow::from_sentences(source_ctx),
            source: source.into(),
            target_ctx: ContextWindow::from_sentences(target_ctx),
            correct,
            contrastive,
            phenomenon,
            distance,
        })
    }
}

/// Reads contrastive examples, one per line:
///
/// `phenomenon  source_ctx  source  target_ctx  correct  contrastive  [distance]`
///
/// Context and contrastive fields pack several sentences joined by `␞`.
pub fn load_contrastive(path: impl AsRef<Path>) -> Result<Vec<ContrastiveExample>, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(io_error(path))?;
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (lineno, line) in numbered_records(&raw) {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(6..=7).contains(&fields.len()) {
            return Err(parse_err(
                lineno,
                format!("expected 6 or 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        let phenomenon: Phenomenon = fields[0].parse().map_err(|m| parse_err(lineno, m))?;
        let list = |i: usize| tsv::split_list(fields[i]).map_err(|m| parse_err(lineno, m));
        let text = |i: usize| tsv::unescape(fields[i]).map_err(|m| parse_err(lineno, m));
        let distance: Distance = fields
            .get(6)
            .copied()
            .unwrap_or("")
            .parse()
            .map_err(|m| parse_err(lineno, m))?;
        let example = ContrastiveExample::new(
            list(1)?,
            text(2)?,
            list(3)?,
            text(4)?,
            list(5)?,
            phenomenon,
            distance,
        )
        .map_err(|e| parse_err(lineno, e.to_string()))?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn write_contrastive(
    path: impl AsRef<Path>,
    examples: &[ContrastiveExample],
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            ex.phenomenon,
            tsv::join_list(ex.source_ctx.sentences()),
            tsv::escape(&ex.source),
            tsv::join_list(ex.target_ctx.sentences()),
            tsv::escape(&ex.correct),
            tsv::join_list(&ex.contrastive),
        ));
        if ex.distance != Distance::Unknown {
            out.push_str(&format!("\t{}", ex.distance));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_error(path))
}
