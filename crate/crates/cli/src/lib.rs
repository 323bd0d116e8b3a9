//! `docmt`: score corpora with document-level metrics and run the
//! meta-evaluation reports.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use docmt_core::backend::conformance;
use docmt_core::backend::{cached, open_provider, serve, Capability, MockProvider};
use docmt_core::bertscore::{BertScoreConfig, DocBertScore, IdfTable};
use docmt_core::comet::{CometConfig, DocComet, DocCometQe, RegressorWeights};
use docmt_core::corpus::{load_contrastive, load_corpus, load_mqm, ContextMode, CorpusError, ParallelCorpus, Phenomenon};
use docmt_core::harness::{
    ablate_context, contrastive_eval, correlate, format_ablation, format_contrastive, format_correlation_table,
    format_mode_comparison, format_significance, perm_both, score_corpus, CorrelationRow, HarnessError,
    MissingPolicy, ScoreMatrix, DEFAULT_PERMUTATIONS,
};
use docmt_core::prism::{Aggregation, DocPrism, PrismConfig};
use docmt_core::{Backend, BackendError, MetricError, SegmentMetric};

pub const DEFAULT_CONTEXT_SIZE: usize = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 1 for scoring and statistics failures, 2 for usage and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } | CliError::Input(_) => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::Parse { .. } => CliError::Input(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Corpus(c) => c.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    DocBertScore,
    DocPrism,
    DocComet,
    DocCometQe,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::DocBertScore => "doc-bertscore",
            MetricKind::DocPrism => "doc-prism",
            MetricKind::DocComet => "doc-comet",
            MetricKind::DocCometQe => "doc-comet-qe",
        })
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "doc-bertscore" => Ok(MetricKind::DocBertScore),
            "doc-prism" => Ok(MetricKind::DocPrism),
            "doc-comet" => Ok(MetricKind::DocComet),
            "doc-comet-qe" => Ok(MetricKind::DocCometQe),
            other => Err(format!(
                "unknown metric `{other}` (expected doc-bertscore, doc-prism, doc-comet or doc-comet-qe)"
            )),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "docmt", version, about = "Document-level MT metrics and meta-evaluation")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every system segment of a corpus.
    Score {
        /// Corpus manifest.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// System-level correlation of score files with human judgments.
    Correlate {
        /// Human MQM judgments.
        #[arg(long)]
        mqm: PathBuf,
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[command(flatten)]
        stats: StatArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Permutation test between two score files.
    Signif {
        /// Human MQM judgments.
        #[arg(long)]
        mqm: PathBuf,
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        stats: StatArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Accuracy on a contrastive set with a reference-free metric.
    Contrastive {
        /// Contrastive examples file.
        #[arg(long)]
        examples: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Correlation for each context size and context mode.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        /// Human MQM judgments.
        #[arg(long)]
        mqm: PathBuf,
        /// Comma-separated context sizes.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        sizes: Vec<usize>,
        /// Comma-separated context modes.
        #[arg(long, value_delimiter = ',', default_value = "reference,hypothesis")]
        modes: Vec<ContextMode>,
        /// `long` lists every cell, `modes` puts the two modes side by side.
        #[arg(long, default_value = "long")]
        format: AblationFormat,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        missing: Option<MissingPolicy>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a provider against the protocol invariants and a recorded transcript.
    Conformance {
        #[arg(long)]
        provider: Option<String>,
        /// Transcript to replay.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Record the standard requests to this file instead of replaying.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Serve a mock provider on standard input and output.
    ServeMock {
        /// `mock:<free|mix>:<seed>`.
        #[arg(default_value = "mock:free:0")]
        spec: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationFormat {
    Long,
    Modes,
}

impl FromStr for AblationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long" => Ok(AblationFormat::Long),
            "modes" => Ok(AblationFormat::Modes),
            other => Err(format!("unknown format `{other}` (expected long or modes)")),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// doc-bertscore, doc-prism, doc-comet or doc-comet-qe
    #[arg(long)]
    pub metric: Option<MetricKind>,
    /// Number of previous sentences used as context
    #[arg(long = "context-size")]
    pub context_size: Option<usize>,
    /// Context for the hypothesis: reference or hypothesis
    #[arg(long = "context-mode")]
    pub context_mode: Option<ContextMode>,
    /// `mock:<free|mix>:<seed>`, `tcp:<addr>`, `unix:<path>` or a command line.
    #[arg(long)]
    pub provider: Option<String>,
    /// Regressor weights for the COMET metrics.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// IDF-weight BERTScore matches using the corpus references.
    #[arg(long)]
    pub idf: bool,
    /// Prism log-probability aggregation: mean or sum.
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StatArgs {
    /// Permutations for the significance test
    #[arg(long = "n-perm")]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Segments without human scores: error or skip
    #[arg(long)]
    pub missing: Option<MissingPolicy>,
}

/// Values read from `--config`. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub metric: Option<String>,
    pub context_size: Option<usize>,
    pub context_mode: Option<ContextMode>,
    pub provider: Option<String>,
    pub weights: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n_perm: Option<usize>,
    pub missing: Option<MissingPolicy>,
    pub idf: Option<bool>,
    pub aggregation: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = read_text(path)?;
        let mut config: FileConfig =
            toml::from_str(&raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if let Some(w) = &config.weights {
            if w.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.weights = Some(base.join(w));
            }
        }
        Ok(config)
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub metric: MetricKind,
    pub n_ctx: usize,
    pub ctx_mode: ContextMode,
    pub provider: Option<String>,
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub n_perm: usize,
    pub missing: MissingPolicy,
    pub idf: bool,
    pub aggregation: Aggregation,
}

fn parse_config_value<T: FromStr<Err = String>>(v: Option<&String>) -> Result<Option<T>, CliError> {
    v.map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("config: {e}"))))
        .transpose()
}

/// Flags over config file over defaults.
pub fn resolve(run: &RunArgs, stats: &StatArgs, file: &FileConfig) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        metric: run
            .metric
            .or(parse_config_value(file.metric.as_ref())?)
            .unwrap_or(MetricKind::DocBertScore),
        n_ctx: run.context_size.or(file.context_size).unwrap_or(DEFAULT_CONTEXT_SIZE),
        ctx_mode: run.context_mode.or(file.context_mode).unwrap_or_default(),
        provider: run.provider.clone().or_else(|| file.provider.clone()),
        weights: run.weights.clone().or_else(|| file.weights.clone()),
        seed: stats.seed.or(run.seed).or(file.seed).unwrap_or(0),
        n_perm: stats.n_perm.or(file.n_perm).unwrap_or(DEFAULT_PERMUTATIONS),
        missing: stats.missing.or(file.missing).unwrap_or_default(),
        idf: run.idf || file.idf.unwrap_or(false),
        aggregation: run
            .aggregation
            .or(parse_config_value(file.aggregation.as_ref())?)
            .unwrap_or_default(),
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the destination directory, or to stdout.
pub fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    let Some(path) = path else {
        let mut out = io::stdout().lock();
        return out
            .write_all(content.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            });
    };
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(content.as_bytes()).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn connect(spec: Option<&str>) -> Result<Backend, CliError> {
    let spec = spec.ok_or_else(|| CliError::Usage("no provider given (use --provider or the config file)".to_string()))?;
    let provider = open_provider(spec).map_err(|e| CliError::Input(format!("provider `{spec}`: {e}")))?;
    let memo = cached(provider).map_err(|e| CliError::Input(format!("provider `{spec}`: {e}")))?;
    Backend::connect(memo).map_err(|e| CliError::Input(format!("provider `{spec}`: {e}")))
}

fn load_weights(config: &RunConfig, backend: &Backend) -> Result<Arc<RegressorWeights>, CliError> {
    let path = config
        .weights
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{} needs --weights", config.metric)))?;
    let weights = RegressorWeights::load(path).map_err(|e| CliError::Input(e.to_string()))?;
    let dim = backend.descriptor().embedding_dim;
    if weights.embedding_dim() != dim {
        return Err(CliError::Usage(format!(
            "{}: weights expect embedding dim {}, provider reports {dim}",
            path.display(),
            weights.embedding_dim()
        )));
    }
    Ok(Arc::new(weights))
}

/// Checks provider capabilities and builds the metric for context size `n_ctx`.
pub struct MetricFactory {
    config: RunConfig,
    backend: Backend,
    idf: Option<Arc<IdfTable>>,
    weights: Option<Arc<RegressorWeights>>,
}

impl MetricFactory {
    pub fn new(config: RunConfig, backend: Backend, corpus: Option<&ParallelCorpus>) -> Result<Self, CliError> {
        let needed = match config.metric {
            MetricKind::DocPrism => Capability::SeqScore,
            _ => Capability::Embed,
        };
        backend
            .require(needed)
            .map_err(|e| CliError::Usage(format!("{} cannot run on this provider: {e}", config.metric)))?;
        let weights = match config.metric {
            MetricKind::DocComet | MetricKind::DocCometQe => Some(load_weights(&config, &backend)?),
            _ => None,
        };
        let idf = match (config.metric, config.idf, corpus) {
            (MetricKind::DocBertScore, true, Some(c)) => Some(Arc::new(IdfTable::from_reference_corpus(&backend, c)?)),
            (MetricKind::DocBertScore, true, None) => {
                return Err(CliError::Usage("--idf needs a corpus".to_string()))
            }
            _ => None,
        };
        Ok(Self {
            config,
            backend,
            idf,
            weights,
        })
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn build(&self, n_ctx: usize) -> Result<Box<dyn SegmentMetric>, CliError> {
        Ok(match self.config.metric {
            MetricKind::DocBertScore => Box::new(DocBertScore {
                backend: self.backend.clone(),
                config: BertScoreConfig {
                    n_ctx,
                    idf: self.idf.clone(),
                    ..Default::default()
                },
            }),
            MetricKind::DocPrism => Box::new(DocPrism {
                backend: self.backend.clone(),
                config: PrismConfig {
                    n_ctx,
                    aggregation: self.config.aggregation,
                },
            }),
            MetricKind::DocComet => Box::new(DocComet {
                backend: self.backend.clone(),
                weights: self.weights.clone().expect("loaded in new"),
                config: CometConfig { n_ctx },
            }),
            MetricKind::DocCometQe => Box::new(self.comet_qe(n_ctx)?),
        })
    }

    pub fn comet_qe(&self, n_ctx: usize) -> Result<DocCometQe, CliError> {
        let weights = self
            .weights
            .clone()
            .ok_or_else(|| CliError::Usage(format!("{} is not reference-free", self.config.metric)))?;
        DocCometQe::new(self.backend.clone(), weights, CometConfig { n_ctx })
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// A parsed score file: `# key: value` header lines, then
/// `system<TAB>doc_id<TAB>index<TAB>score` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub header: BTreeMap<String, String>,
    pub matrix: ScoreMatrix,
}

impl ScoreFile {
    /// Short row label such as `doc-prism@2` or `doc-prism@2:hyp`.
    pub fn label(&self) -> String {
        let metric = self.header.get("metric").map_or("?", String::as_str);
        let n = self.header.get("n_ctx").map_or("?", String::as_str);
        match self.header.get("ctx_mode").map(String::as_str) {
            Some("hypothesis") => format!("{metric}@{n}:hyp"),
            _ => format!("{metric}@{n}"),
        }
    }
}

pub const SCORE_COLUMNS: &str = "system\tdoc_id\tindex\tscore";

pub fn format_score_file(header: &[(&str, String)], matrix: &ScoreMatrix) -> String {
    let mut out = String::from("# docmt scores\n");
    for (k, v) in header {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push_str(&format!("# {SCORE_COLUMNS}\n"));
    for (s, system) in matrix.systems().iter().enumerate() {
        for (k, (doc_id, index)) in matrix.segment_keys().iter().enumerate() {
            out.push_str(&format!("{system}\t{doc_id}\t{index}\t{}\n", matrix.values()[[s, k]]));
        }
    }
    out
}

pub fn read_score_file(path: &Path, missing: MissingPolicy) -> Result<ScoreFile, CliError> {
    let raw = read_text(path)?;
    let bad = |line: usize, msg: String| CliError::Input(format!("{}:{line}: {msg}", path.display()));
    let mut header = BTreeMap::new();
    let mut systems: Vec<String> = Vec::new();
    let mut keys: Vec<(String, usize)> = Vec::new();
    let mut cells: BTreeMap<(String, String, usize), f64> = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once(": ") {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [system, doc_id, index, score] = fields[..] else {
            return Err(bad(i + 1, format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let index: usize = index.parse().map_err(|_| bad(i + 1, format!("invalid index `{index}`")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(i + 1, format!("invalid score `{score}`")))?;
        if !systems.iter().any(|s| s == system) {
            systems.push(system.to_string());
        }
        let key = (doc_id.to_string(), index);
        if !keys.contains(&key) {
            keys.push(key);
        }
        if cells.insert((system.to_string(), doc_id.to_string(), index), score).is_some() {
            return Err(bad(i + 1, format!("duplicate score for {system} {doc_id}:{index}")));
        }
    }
    if systems.is_empty() {
        return Err(CliError::Input(format!("{}: no scores", path.display())));
    }
    let matrix = ScoreMatrix::from_cells(systems, keys, missing, |s, d, i| {
        cells.get(&(s.to_string(), d.to_string(), i)).copied()
    })
    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(ScoreFile { header, matrix })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_score(corpus_path: &Path, config: &RunConfig, output: Option<&Path>) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_path)?;
    let backend = connect(config.provider.as_deref())?;
    let factory = MetricFactory::new(config.clone(), backend, Some(&corpus))?;
    let metric = factory.build(config.n_ctx)?;
    let scores = score_corpus(&corpus, metric.as_ref(), config.n_ctx, config.ctx_mode)?;
    let mut header = vec![
        ("metric", config.metric.to_string()),
        ("n_ctx", config.n_ctx.to_string()),
        ("ctx_mode", config.ctx_mode.to_string()),
        ("provider", factory.backend().descriptor().provider_id.clone()),
        ("seed", config.seed.to_string()),
    ];
    match config.metric {
        MetricKind::DocBertScore => header.push(("idf", config.idf.to_string())),
        MetricKind::DocPrism => header.push(("aggregation", config.aggregation.to_string())),
        MetricKind::DocComet | MetricKind::DocCometQe => {
            header.push(("weights", file_name(config.weights.as_deref().expect("checked"))))
        }
    }
    write_output(output, &format_score_file(&header, &scores))
}

fn same_setup(a: &ScoreFile, b: &ScoreFile) -> bool {
    ["metric", "provider", "ctx_mode"]
        .iter()
        .all(|k| a.header.get(*k) == b.header.get(*k))
}

/// One row per score file. A document-level file is tested against the
/// matching zero-context file when one is present.
fn cmd_correlate(mqm: &Path, scores: &[PathBuf], config: &RunConfig, output: Option<&Path>) -> Result<(), CliError> {
    let human = load_mqm(mqm)?;
    let files = scores
        .iter()
        .map(|p| read_score_file(p, config.missing))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(files.len());
    for file in &files {
        let correlation = correlate(&file.matrix, &human, config.missing)?;
        let n_ctx = file.header.get("n_ctx").map(String::as_str);
        let baseline = files
            .iter()
            .find(|o| n_ctx != Some("0") && o.header.get("n_ctx").map(String::as_str) == Some("0") && same_setup(file, o));
        let significance = baseline
            .map(|b| perm_both(&file.matrix, &b.matrix, &human, config.n_perm, config.seed, config.missing))
            .transpose()?;
        rows.push(CorrelationRow {
            metric: file.label(),
            correlation,
            significance,
        });
    }
    write_output(output, &format_correlation_table(&rows))
}

fn cmd_signif(mqm: &Path, a: &Path, b: &Path, config: &RunConfig, output: Option<&Path>) -> Result<(), CliError> {
    let human = load_mqm(mqm)?;
    let a = read_score_file(a, config.missing)?;
    let b = read_score_file(b, config.missing)?;
    let result = perm_both(&a.matrix, &b.matrix, &human, config.n_perm, config.seed, config.missing)?;
    write_output(output, &format_significance(&a.label(), &b.label(), &result))
}

fn cmd_contrastive(examples: &Path, config: &RunConfig, output: Option<&Path>) -> Result<(), CliError> {
    if config.metric != MetricKind::DocCometQe {
        return Err(CliError::Usage(format!(
            "contrastive evaluation needs a reference-free metric; {} uses references",
            config.metric
        )));
    }
    let examples = load_contrastive(examples)?;
    let backend = connect(config.provider.as_deref())?;
    let scorer = MetricFactory::new(config.clone(), backend, None)?.comet_qe(config.n_ctx)?;
    let mut rows = Vec::new();
    for phenomenon in [Phenomenon::Pronoun, Phenomenon::Wsd] {
        let subset: Vec<_> = examples.iter().filter(|e| e.phenomenon == phenomenon).cloned().collect();
        if !subset.is_empty() {
            rows.push((phenomenon.to_string(), contrastive_eval(&subset, &scorer, config.n_ctx)?));
        }
    }
    rows.push(("all".to_string(), contrastive_eval(&examples, &scorer, config.n_ctx)?));
    write_output(output, &format_contrastive(&rows))
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    corpus_path: &Path,
    mqm: &Path,
    sizes: &[usize],
    modes: &[ContextMode],
    format: AblationFormat,
    config: &RunConfig,
    output: Option<&Path>,
) -> Result<(), CliError> {
    if sizes.is_empty() || modes.is_empty() {
        return Err(CliError::Usage("--sizes and --modes must be non-empty".to_string()));
    }
    let corpus = load_corpus(corpus_path)?;
    let human = load_mqm(mqm)?;
    let backend = connect(config.provider.as_deref())?;
    let factory = MetricFactory::new(config.clone(), backend, Some(&corpus))?;
    let table = ablate_context(
        &corpus,
        &human,
        |n| factory.build(n).map_err(|e| HarnessError::Invalid(e.to_string())),
        sizes,
        modes,
        config.missing,
    )?;
    let text = match format {
        AblationFormat::Long => format_ablation(&table),
        AblationFormat::Modes => format_mode_comparison(&table),
    };
    write_output(output, &text)
}

fn cmd_conformance(provider: Option<&str>, transcript: Option<&Path>, record: Option<&Path>) -> Result<(), CliError> {
    let spec = provider.ok_or_else(|| CliError::Usage("conformance needs --provider".to_string()))?;
    let raw = open_provider(spec).map_err(|e| CliError::Input(format!("provider `{spec}`: {e}")))?;
    if let Some(path) = record {
        let entries = conformance::record(raw.as_ref(), &conformance::standard_requests());
        conformance::write_transcript(path, &entries).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        println!("recorded {} requests to {}", entries.len(), path.display());
        return Ok(());
    }
    let backend = Backend::from_arc(raw.clone()).map_err(|e| CliError::Input(format!("provider `{spec}`: {e}")))?;
    let mut problems = conformance::check_invariants(&backend)?;
    if let Some(path) = transcript {
        let entries = conformance::read_transcript(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        problems.extend(conformance::replay(raw.as_ref(), &entries, conformance::NUMERIC_TOLERANCE));
    }
    if problems.is_empty() {
        println!("conformance: ok");
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "conformance: {} problem(s)\n{}",
            problems.len(),
            problems.join("\n")
        )))
    }
}

fn cmd_serve_mock(spec: &str) -> Result<(), CliError> {
    let mock = MockProvider::from_spec(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    serve(&mock, stdin, stdout).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdio>"),
        source,
    })
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let none = StatArgs::default();
    match cli.command {
        Command::Score { corpus, run, output } => cmd_score(&corpus, &resolve(&run, &none, &file)?, output.as_deref()),
        Command::Correlate {
            mqm,
            scores,
            stats,
            output,
        } => cmd_correlate(&mqm, &scores, &resolve(&RunArgs::default(), &stats, &file)?, output.as_deref()),
        Command::Signif {
            mqm,
            a,
            b,
            stats,
            output,
        } => cmd_signif(&mqm, &a, &b, &resolve(&RunArgs::default(), &stats, &file)?, output.as_deref()),
        Command::Contrastive { examples, run, output } => {
            let mut run = run;
            if run.metric.is_none() && file.metric.is_none() {
                run.metric = Some(MetricKind::DocCometQe);
            }
            cmd_contrastive(&examples, &resolve(&run, &none, &file)?, output.as_deref())
        }
        Command::Ablate {
            corpus,
            mqm,
            sizes,
            modes,
            format,
            run,
            missing,
            output,
        } => {
            let stats = StatArgs {
                missing,
                ..Default::default()
            };
            let config = resolve(&run, &stats, &file)?;
            cmd_ablate(&corpus, &mqm, &sizes, &modes, format, &config, output.as_deref())
        }
        Command::Conformance {
            provider,
            transcript,
            record,
        } => cmd_conformance(
            provider.as_deref().or(file.provider.as_deref()),
            transcript.as_deref(),
            record.as_deref(),
        ),
        Command::ServeMock { spec } => cmd_serve_mock(&spec),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("docmt: {e}");
            e.exit_code()
        }
    }
}
