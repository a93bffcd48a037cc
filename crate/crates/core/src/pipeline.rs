//! End-to-end orchestration. Every stage reads the previous stage's JSON
//! handoff from the output directory and writes its own, so a run can be
//! resumed or hand-corrected between stages:
//!
//! | stage       | reads                          | writes                          |
//! |-------------|--------------------------------|---------------------------------|
//! | `extract`   | manifest                       | `contexts.json`                 |
//! | `cluster`   | `contexts.json`                | `clusters.json`                 |
//! | `project`   | `contexts.json`, `clusters.json` | `projection.json`, `clusters.svg` |
//! | `summarize` | `contexts.json`, `clusters.json` | `summaries.json`                |
//! | `evaluate`  | all of the above               | `report.json`, `report.md`      |
//!
//! A stage removes its own outputs and everything downstream before it runs,
//! so stale artifacts from an earlier run are never mixed with fresh ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    compare_cluster_counts, label_clusters, ClusterError, KMeansConfig, PolarityLexicon,
    SentimentLabel, SentimentLabeling, DEFAULT_SEED,
};
use crate::corpus::{ingest_corpus, CorpusError, TargetPaper};
use crate::embed::{
    build_embedder, fnv1a64, EmbedError, EmbeddingProviderConfig, EmbeddingVector,
    ProviderDescriptor, ProviderKind, DEFAULT_FALLBACK_DIM,
};
use crate::evaluate::{
    mean_similarity, similarity_by_polarity, timestamp_now, ClusteringSummary, EvaluateError,
    EvaluationReport, ExtractionStats, LabelingSummary, StageRecord, StageStatus, SummaryRecord,
    REPORT_SCHEMA_VERSION,
};
use crate::extract::{
    align_and_dedup, extract_corpus, manual_contexts, parse_manual_contexts, CitationContext,
    CorpusExtraction, ManualContextError,
};
use crate::project::{
    projection_records, render_scatter, tsne_project, ProjectError, ProjectedPoint, TsneConfig,
};
use crate::summarize::{
    GenerationConfig, Polarity, RemoteGenerator, SummarizeError, Summarizer, Summary, TemplateSet,
    TextGenerator, DEFAULT_EXTRACTIVE_SENTENCES,
};
use crate::textprep::{CleanedStatement, StopwordList};

pub const CONTEXTS_FILE: &str = "contexts.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const PROJECTION_FILE: &str = "projection.json";
pub const SVG_FILE: &str = "clusters.svg";
pub const SUMMARIES_FILE: &str = "summaries.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_MD_FILE: &str = "report.md";

const AFTER_EXTRACT: &[&str] = &[
    CLUSTERS_FILE,
    PROJECTION_FILE,
    SVG_FILE,
    SUMMARIES_FILE,
    REPORT_JSON_FILE,
    REPORT_MD_FILE,
];
const REPORT_FILES: &[&str] = &[REPORT_JSON_FILE, REPORT_MD_FILE];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Manual(#[from] ManualContextError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{name} not found in {}; run the `{stage}` stage first", dir.display())]
    MissingArtifact {
        name: &'static str,
        stage: &'static str,
        dir: PathBuf,
    },
    #[error("{path}: malformed artifact: {message}")]
    ArtifactFormat { path: PathBuf, message: String },
    #[error("{artifact} was produced by a different embedding provider ({recorded}); current provider is {current}")]
    ProviderMismatch {
        artifact: &'static str,
        recorded: String,
        current: String,
    },
    #[error("{0} does not match the current contexts.json; rerun the `cluster` stage")]
    StaleArtifact(&'static str),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error("projection failed: {0}")]
    Project(#[from] ProjectError),
    #[error("summarization failed: {0}")]
    Summarize(#[from] SummarizeError),
    #[error("evaluation failed: {0}")]
    Evaluate(#[from] EvaluateError),
}

impl PipelineError {
    /// Fatal errors abort a full run; the rest are recorded against their
    /// stage and the run continues.
    pub fn is_fatal(&self) -> bool {
        match self {
            PipelineError::Embed(e) => {
                e.is_contract_violation() || matches!(e, EmbedError::Config(_))
            }
            PipelineError::Cluster(_)
            | PipelineError::Project(_)
            | PipelineError::Summarize(_)
            | PipelineError::Evaluate(_) => false,
            _ => true,
        }
    }
}

/// Which text of a statement is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddedText {
    Original,
    Cleaned,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub embedding: EmbeddingProviderConfig,
    pub generation: Option<GenerationConfig>,
    pub offline: bool,
    pub embed_cleaned: bool,
    pub normalize: bool,
    pub stopwords: Option<PathBuf>,
    pub lexicon_pos: Option<PathBuf>,
    pub lexicon_neg: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub manual_contexts: Option<PathBuf>,
    pub tsne: TsneConfig,
    pub extractive_sentences: usize,
    pub restarts: usize,
}

impl RunConfig {
    pub fn new(manifest: Option<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest,
            out_dir: out_dir.into(),
            ks: vec![2, 3],
            seed: DEFAULT_SEED,
            embedding: EmbeddingProviderConfig::default(),
            generation: None,
            offline: false,
            embed_cleaned: false,
            normalize: false,
            stopwords: None,
            lexicon_pos: None,
            lexicon_neg: None,
            templates: None,
            manual_contexts: None,
            tsne: TsneConfig::default(),
            extractive_sentences: DEFAULT_EXTRACTIVE_SENTENCES,
            restarts: 10,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.ks.is_empty() {
            return Err(PipelineError::Config("at least one k is required".into()));
        }
        if let Some(k) = self.ks.iter().find(|&&k| k < 2) {
            return Err(PipelineError::Config(format!(
                "k must be at least 2, got {k}"
            )));
        }
        if self.extractive_sentences == 0 {
            return Err(PipelineError::Config(
                "extractive summary length must be at least 1".into(),
            ));
        }
        self.embedding_config().validate()?;
        Ok(())
    }

    /// Offline runs never touch the network, so a remote embedding provider
    /// is replaced by the hashed fallback.
    pub fn embedding_config(&self) -> EmbeddingProviderConfig {
        if self.offline && self.embedding.kind == ProviderKind::Remote {
            EmbeddingProviderConfig::hashed(DEFAULT_FALLBACK_DIM)
        } else {
            self.embedding.clone()
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn stopword_list(&self) -> Result<StopwordList, PipelineError> {
        match &self.stopwords {
            Some(p) => StopwordList::load(p).map_err(|source| PipelineError::Io {
                path: p.clone(),
                source,
            }),
            None => Ok(StopwordList::default()),
        }
    }

    fn lexicon(&self) -> Result<PolarityLexicon, PipelineError> {
        PolarityLexicon::load(self.lexicon_pos.as_deref(), self.lexicon_neg.as_deref()).map_err(
            |source| PipelineError::Io {
                path: self
                    .lexicon_pos
                    .clone()
                    .or_else(|| self.lexicon_neg.clone())
                    .unwrap_or_default(),
                source,
            },
        )
    }

    fn template_set(&self) -> Result<TemplateSet, PipelineError> {
        match &self.templates {
            Some(dir) => Ok(TemplateSet::load_dir(dir)?),
            None => Ok(TemplateSet::default()),
        }
    }
}

/// `contexts.json`: the target, per-document accounting and the
/// deduplicated contexts. Users may edit `extraction.contexts` by hand
/// before clustering; cleaned statements are recomputed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextsArtifact {
    pub target: TargetPaper,
    pub extraction: CorpusExtraction,
    pub warnings: Vec<String>,
}

/// `clusters.json`: self-describing so that a later stage can refuse to
/// mix vectors from another provider or from edited contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersArtifact {
    pub provider: ProviderDescriptor,
    pub dim: usize,
    pub seed: u64,
    pub normalized: bool,
    pub embedded_text: EmbeddedText,
    pub contexts_fingerprint: String,
    pub k: Option<usize>,
    pub assignments: Vec<usize>,
    pub labels: BTreeMap<usize, SentimentLabel>,
    pub mean_silhouette: Option<f64>,
    pub silhouette_by_k: BTreeMap<usize, f64>,
    pub cluster_sizes: Vec<usize>,
    pub polarity_scores: BTreeMap<usize, f64>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    pub embeddings: Vec<EmbeddingVector>,
}

impl ClustersArtifact {
    fn labeling(&self) -> Option<SentimentLabeling> {
        (!self.labels.is_empty()).then(|| SentimentLabeling {
            label_of_cluster: self.labels.clone(),
            cluster_polarity_score: self.polarity_scores.clone(),
            warnings: Vec::new(),
        })
    }

    fn cluster_with(&self, label: SentimentLabel) -> Option<usize> {
        self.labels
            .iter()
            .find(|(_, l)| **l == label)
            .map(|(c, _)| *c)
    }
}

/// `projection.json`: the 2-D points as `[{x, y, cluster, label}]` plus
/// the run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionArtifact {
    pub seed: u64,
    pub perplexity: Option<f64>,
    pub final_kl: f64,
    pub warnings: Vec<String>,
    pub points: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummariesArtifact {
    pub summaries: Vec<Summary>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

/// Order-sensitive fingerprint of the contexts a clustering was fitted on.
pub fn contexts_fingerprint(contexts: &[CitationContext]) -> String {
    let mut buf = Vec::new();
    for c in contexts {
        buf.extend_from_slice(c.doc_id.as_bytes());
        buf.push(0);
        buf.extend_from_slice(c.sentence_index.to_string().as_bytes());
        buf.push(0);
        buf.extend_from_slice(c.text.as_bytes());
        buf.push(0x1e);
    }
    format!("{:016x}", fnv1a64(&buf))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(
    cfg: &RunConfig,
    name: &'static str,
    stage: &'static str,
) -> Result<T, PipelineError> {
    let path = cfg.path(name);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            name,
            stage,
            dir: cfg.out_dir.clone(),
        });
    }
    let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::ArtifactFormat {
        path,
        message: e.to_string(),
    })
}

fn read_optional<T: DeserializeOwned>(
    cfg: &RunConfig,
    name: &'static str,
    stage: &'static str,
) -> Result<Option<T>, PipelineError> {
    match read_json(cfg, name, stage) {
        Ok(v) => Ok(Some(v)),
        Err(PipelineError::MissingArtifact { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn clear(cfg: &RunConfig, names: &[&str]) -> Result<(), PipelineError> {
    for name in names {
        let path = cfg.path(name);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(PipelineError::Io { path, source }),
        }
    }
    Ok(())
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|source| PipelineError::Io {
        path: cfg.out_dir.clone(),
        source,
    })
}

fn describe(d: &ProviderDescriptor) -> String {
    match d.kind {
        ProviderKind::Remote => format!("remote {}", d.base_url.as_deref().unwrap_or("?")),
        ProviderKind::HashedFallback => format!("hashed fallback dim {}", d.dim.unwrap_or(0)),
    }
}

fn check_provider(cfg: &RunConfig, clusters: &ClustersArtifact) -> Result<(), PipelineError> {
    let current = cfg.embedding_config().descriptor();
    if clusters.provider != current {
        return Err(PipelineError::ProviderMismatch {
            artifact: CLUSTERS_FILE,
            recorded: describe(&clusters.provider),
            current: describe(&current),
        });
    }
    Ok(())
}

fn check_fresh(
    contexts: &ContextsArtifact,
    clusters: &ClustersArtifact,
) -> Result<(), PipelineError> {
    if clusters.contexts_fingerprint != contexts_fingerprint(&contexts.extraction.contexts) {
        return Err(PipelineError::StaleArtifact(CLUSTERS_FILE));
    }
    Ok(())
}

/// Ingests the manifest, extracts and trims citation contexts, merges any
/// hand-written contexts and writes `contexts.json`.
pub fn stage_extract(cfg: &RunConfig) -> Result<ContextsArtifact, PipelineError> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--manifest is required".into()))?;
    ensure_out_dir(cfg)?;
    clear(cfg, &[CONTEXTS_FILE])?;
    clear(cfg, AFTER_EXTRACT)?;
    let stopwords = cfg.stopword_list()?;
    let corpus = ingest_corpus(manifest)?;
    log::info!(
        "ingested {} documents ({} parsed) for target {:?}",
        corpus.documents_total(),
        corpus.documents_parsed(),
        corpus.target.title
    );
    let mut extraction = extract_corpus(&corpus, &stopwords);
    let mut warnings = corpus.warnings.clone();

    if let Some(path) = &cfg.manual_contexts {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        let lines = parse_manual_contexts(&text)?;
        let (manual, w) = manual_contexts(&lines, &extraction);
        warnings.extend(w);
        let mut all = std::mem::take(&mut extraction.contexts);
        all.extend(manual);
        all.sort_by(|a, b| a.corpus_key().cmp(&b.corpus_key()));
        let (contexts, statements, removed) = align_and_dedup(all, &stopwords);
        extraction.contexts = contexts;
        extraction.statements = statements;
        extraction.dedup_count += removed;
    }
    for d in &extraction.documents {
        warnings.extend(d.warnings.iter().map(|w| format!("{}: {w}", d.doc_id)));
    }
    log::info!(
        "found {} citation contexts ({} duplicates removed)",
        extraction.contexts.len(),
        extraction.dedup_count
    );

    let artifact = ContextsArtifact {
        target: corpus.target,
        extraction,
        warnings,
    };
    write_json(&cfg.path(CONTEXTS_FILE), &artifact)?;
    Ok(artifact)
}

/// Embeds the contexts, compares the candidate cluster counts, labels the
/// selected clustering and writes `clusters.json`.
pub fn stage_cluster(cfg: &RunConfig) -> Result<ClustersArtifact, PipelineError> {
    let contexts: ContextsArtifact = read_json(cfg, CONTEXTS_FILE, "extract")?;
    clear(cfg, AFTER_EXTRACT)?;
    let stopwords = cfg.stopword_list()?;
    let lexicon = cfg.lexicon()?;
    let embed_cfg = cfg.embedding_config();
    let ctxs = &contexts.extraction.contexts;
    let statements: Vec<CleanedStatement> = ctxs
        .iter()
        .map(|c| CleanedStatement::new(&c.doc_id, c.sentence_index, &c.text, &stopwords))
        .collect();

    let mut artifact = ClustersArtifact {
        provider: embed_cfg.descriptor(),
        dim: 0,
        seed: cfg.seed,
        normalized: cfg.normalize,
        embedded_text: if cfg.embed_cleaned {
            EmbeddedText::Cleaned
        } else {
            EmbeddedText::Original
        },
        contexts_fingerprint: contexts_fingerprint(ctxs),
        k: None,
        assignments: Vec::new(),
        labels: BTreeMap::new(),
        mean_silhouette: None,
        silhouette_by_k: BTreeMap::new(),
        cluster_sizes: Vec::new(),
        polarity_scores: BTreeMap::new(),
        stages: Vec::new(),
        warnings: Vec::new(),
        embeddings: Vec::new(),
    };

    if ctxs.is_empty() {
        artifact
            .stages
            .push(StageRecord::not_run("cluster", "no citation contexts"));
        artifact
            .stages
            .push(StageRecord::not_run("label", "no citation contexts"));
        write_json(&cfg.path(CLUSTERS_FILE), &artifact)?;
        return Ok(artifact);
    }

    let texts: Vec<String> = if cfg.embed_cleaned {
        statements.iter().map(|s| s.cleaned_text.clone()).collect()
    } else {
        ctxs.iter().map(|c| c.text.clone()).collect()
    };
    let embedder = build_embedder(&embed_cfg)?;
    let mut vectors = embedder.embed(&texts)?;
    if cfg.normalize {
        vectors = vectors.iter().map(EmbeddingVector::normalized).collect();
    }
    artifact.dim = vectors[0].dim();
    let n = vectors.len();

    let mut ks: Vec<usize> = cfg.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let (feasible, dropped): (Vec<usize>, Vec<usize>) = ks.into_iter().partition(|&k| k < n);
    for k in &dropped {
        artifact.warnings.push(format!(
            "k={k} dropped: needs more than {k} contexts, have {n}"
        ));
    }

    if feasible.is_empty() {
        let reason = format!("too few contexts ({n}) for the requested cluster counts");
        artifact
            .stages
            .push(StageRecord::not_run("cluster", &reason));
        artifact.stages.push(StageRecord::not_run("label", &reason));
    } else {
        let base = KMeansConfig {
            restarts: cfg.restarts,
            ..KMeansConfig::new(feasible[0]).with_seed(cfg.seed)
        };
        let comparison = compare_cluster_counts(&vectors, &feasible, &base)?;
        let model = comparison.selected_model();
        artifact.k = Some(model.k);
        artifact.assignments = model.assignments.clone();
        artifact.cluster_sizes = model.cluster_sizes();
        artifact.silhouette_by_k = comparison
            .scores
            .iter()
            .map(|s| (s.k, s.mean_silhouette))
            .collect();
        artifact.mean_silhouette = comparison.score_for(model.k);
        artifact.stages.push(StageRecord::ok("cluster"));
        log::info!(
            "selected k={} (silhouette by k: {:?})",
            model.k,
            artifact.silhouette_by_k
        );
        match label_clusters(model, &statements, &lexicon) {
            Ok(l) => {
                artifact.warnings.extend(l.warnings.iter().cloned());
                artifact.labels = l.label_of_cluster;
                artifact.polarity_scores = l.cluster_polarity_score;
                artifact.stages.push(StageRecord::ok("label"));
            }
            Err(e) => artifact
                .stages
                .push(StageRecord::failed("label", e.to_string())),
        }
    }
    artifact.embeddings = vectors;
    write_json(&cfg.path(CLUSTERS_FILE), &artifact)?;
    Ok(artifact)
}

/// Projects the stored embeddings to 2-D and writes `projection.json` and
/// `clusters.svg`.
pub fn stage_project(cfg: &RunConfig) -> Result<ProjectionArtifact, PipelineError> {
    let contexts: ContextsArtifact = read_json(cfg, CONTEXTS_FILE, "extract")?;
    let clusters: ClustersArtifact = read_json(cfg, CLUSTERS_FILE, "cluster")?;
    check_fresh(&contexts, &clusters)?;
    clear(cfg, &[PROJECTION_FILE, SVG_FILE])?;
    clear(cfg, REPORT_FILES)?;

    let n = clusters.embeddings.len();
    let tsne_cfg = TsneConfig {
        seed: cfg.seed,
        ..cfg.tsne.clone()
    };
    let projection = tsne_project(&clusters.embeddings, &tsne_cfg)?;
    for w in &projection.warnings {
        log::warn!("{w}");
    }
    let assignments = if clusters.assignments.len() == n {
        clusters.assignments.clone()
    } else {
        vec![0; n]
    };
    let labeling = clusters.labeling();
    let svg = render_scatter(
        &projection,
        labeling.as_ref(),
        &assignments,
        clusters.mean_silhouette,
    )?;
    let artifact = ProjectionArtifact {
        seed: cfg.seed,
        perplexity: (n >= 4).then(|| tsne_cfg.perplexity_for(n)),
        final_kl: projection.final_kl,
        warnings: projection.warnings.clone(),
        points: projection_records(&projection, &assignments, labeling.as_ref())?,
    };
    write_json(&cfg.path(PROJECTION_FILE), &artifact)?;
    write_text(&cfg.path(SVG_FILE), &svg)?;
    Ok(artifact)
}

fn generator(cfg: &RunConfig) -> Option<RemoteGenerator> {
    if cfg.offline {
        None
    } else {
        cfg.generation.as_ref().map(RemoteGenerator::new)
    }
}

/// Writes citation-derived summaries for the Positive and Negative clusters
/// and, when the target's full text is available and a generator is
/// configured, full-text summaries for both polarities.
pub fn stage_summarize(cfg: &RunConfig) -> Result<SummariesArtifact, PipelineError> {
    let contexts: ContextsArtifact = read_json(cfg, CONTEXTS_FILE, "extract")?;
    let clusters: ClustersArtifact = read_json(cfg, CLUSTERS_FILE, "cluster")?;
    check_fresh(&contexts, &clusters)?;
    check_provider(cfg, &clusters)?;
    clear(cfg, &[SUMMARIES_FILE])?;
    clear(cfg, REPORT_FILES)?;

    let embedder = build_embedder(&cfg.embedding_config())?;
    let remote = generator(cfg);
    let mut summarizer = Summarizer::new(
        embedder.as_ref(),
        remote.as_ref().map(|g| g as &dyn TextGenerator),
        cfg.offline,
    );
    summarizer.templates = cfg.template_set()?;
    summarizer.k_sentences = cfg.extractive_sentences;
    if let Some(g) = &cfg.generation {
        summarizer.max_tokens = g.max_tokens;
        summarizer.temperature = g.temperature;
    }

    let mut summaries = Vec::new();
    let mut stages = Vec::new();
    let target = &contexts.target;
    for polarity in Polarity::BOTH {
        let stage = format!("summary_{}", polarity.lowercase());
        let label = match polarity {
            Polarity::Positive => SentimentLabel::Positive,
            Polarity::Negative => SentimentLabel::Negative,
        };
        let Some(cluster) = clusters.cluster_with(label) else {
            stages.push(StageRecord::not_run(&stage, "no labeled clustering"));
            continue;
        };
        let members: Vec<CitationContext> = contexts
            .extraction
            .contexts
            .iter()
            .zip(&clusters.assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(c, _)| c.clone())
            .collect();
        match summarizer.summarize_cluster(&members, polarity, target) {
            Ok(s) => {
                summaries.push(s);
                stages.push(StageRecord::ok(&stage));
            }
            Err(e) => stages.push(StageRecord::failed(&stage, e.to_string())),
        }
    }
    for polarity in Polarity::BOTH {
        let stage = format!("fulltext_{}", polarity.lowercase());
        match summarizer.summarize_fulltext(target, polarity) {
            Ok(s) => {
                summaries.push(s);
                stages.push(StageRecord::ok(&stage));
            }
            Err(e @ (SummarizeError::FullTextRequired | SummarizeError::OfflineFullText)) => {
                stages.push(StageRecord::not_run(&stage, e.to_string()))
            }
            Err(e) => stages.push(StageRecord::failed(&stage, e.to_string())),
        }
    }
    let artifact = SummariesArtifact {
        summaries,
        stages,
        warnings: Vec::new(),
    };
    write_json(&cfg.path(SUMMARIES_FILE), &artifact)?;
    Ok(artifact)
}

/// Builds the run report from whatever artifacts exist and writes
/// `report.json` and `report.md`.
pub fn stage_evaluate(cfg: &RunConfig) -> Result<EvaluationReport, PipelineError> {
    evaluate_with(cfg, &[])
}

/// Like [`stage_evaluate`], with stage outcomes observed during a full run
/// taking precedence over those inferred from the artifacts.
fn evaluate_with(
    cfg: &RunConfig,
    observed: &[StageRecord],
) -> Result<EvaluationReport, PipelineError> {
    let contexts: ContextsArtifact = read_json(cfg, CONTEXTS_FILE, "extract")?;
    let clusters: Option<ClustersArtifact> = read_optional(cfg, CLUSTERS_FILE, "cluster")?;
    if let Some(c) = &clusters {
        check_fresh(&contexts, c)?;
    }
    let projection: Option<ProjectionArtifact> = read_optional(cfg, PROJECTION_FILE, "project")?;
    let summaries: Option<SummariesArtifact> = read_optional(cfg, SUMMARIES_FILE, "summarize")?;
    clear(cfg, REPORT_FILES)?;

    let mut stages = vec![StageRecord::ok("extract")];
    let mut warnings = contexts.warnings.clone();
    let mut artifacts = BTreeMap::from([
        ("contexts".to_string(), CONTEXTS_FILE.to_string()),
        ("report_json".to_string(), REPORT_JSON_FILE.to_string()),
        ("report_markdown".to_string(), REPORT_MD_FILE.to_string()),
    ]);

    let (clustering, labeling) = match &clusters {
        Some(c) => {
            stages.extend(c.stages.iter().cloned());
            warnings.extend(c.warnings.iter().cloned());
            artifacts.insert("clusters".into(), CLUSTERS_FILE.into());
            let clustering = c.k.map(|k| ClusteringSummary {
                silhouette_by_k: c.silhouette_by_k.clone(),
                selected_k: k,
                seed: c.seed,
                dim: c.dim,
                provider: c.provider.clone(),
                cluster_sizes: c.cluster_sizes.clone(),
            });
            let labeling = c.labeling().as_ref().map(LabelingSummary::from);
            (clustering, labeling)
        }
        None => {
            stages.push(StageRecord::not_run(
                "cluster",
                format!("{CLUSTERS_FILE} not found"),
            ));
            stages.push(StageRecord::not_run(
                "label",
                format!("{CLUSTERS_FILE} not found"),
            ));
            (None, None)
        }
    };

    match &projection {
        Some(p) => {
            stages.push(StageRecord::ok("project"));
            warnings.extend(p.warnings.iter().cloned());
            artifacts.insert("projection".into(), PROJECTION_FILE.into());
            if cfg.path(SVG_FILE).exists() {
                artifacts.insert("scatter_svg".into(), SVG_FILE.into());
            }
        }
        None => stages.push(StageRecord::not_run(
            "project",
            format!("{PROJECTION_FILE} not found"),
        )),
    }

    let summary_list: Vec<Summary> = summaries
        .as_ref()
        .map(|s| s.summaries.clone())
        .unwrap_or_default();
    match &summaries {
        Some(s) => {
            stages.extend(s.stages.iter().cloned());
            warnings.extend(s.warnings.iter().cloned());
            artifacts.insert("summaries".into(), SUMMARIES_FILE.into());
        }
        None => {
            for stage in [
                "summary_positive",
                "summary_negative",
                "fulltext_positive",
                "fulltext_negative",
            ] {
                stages.push(StageRecord::not_run(
                    stage,
                    format!("{SUMMARIES_FILE} not found"),
                ));
            }
        }
    }

    let mut similarity = BTreeMap::new();
    let pairs = summary_list
        .iter()
        .any(|s| s.source == crate::summarize::SummarySource::FullText);
    if !pairs {
        stages.push(StageRecord::not_run(
            "similarity",
            "no full-text summaries to compare against",
        ));
    } else {
        let outcome = clusters
            .as_ref()
            .map_or(Ok(()), |c| check_provider(cfg, c))
            .and_then(|()| Ok(build_embedder(&cfg.embedding_config())?))
            .and_then(|e| Ok(similarity_by_polarity(&summary_list, e.as_ref())?));
        match outcome {
            Ok(scores) if scores.is_empty() => stages.push(StageRecord::not_run(
                "similarity",
                "no polarity has both summaries",
            )),
            Ok(scores) => {
                similarity = scores;
                stages.push(StageRecord::ok("similarity"));
            }
            Err(e @ PipelineError::ProviderMismatch { .. }) => return Err(e),
            Err(e) => stages.push(StageRecord::failed("similarity", e.to_string())),
        }
    }

    for obs in observed {
        match stages.iter_mut().find(|s| s.stage == obs.stage) {
            Some(s) => *s = obs.clone(),
            None => stages.push(obs.clone()),
        }
    }

    let report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        paper_id: contexts.target.id.clone(),
        paper_title: contexts.target.title.clone(),
        generated_at: timestamp_now(),
        extraction: ExtractionStats::from_extraction(&contexts.extraction),
        clustering,
        labeling,
        summaries: summary_list.iter().map(SummaryRecord::from).collect(),
        mean_similarity: mean_similarity(&similarity),
        similarity,
        artifacts,
        stages,
        warnings,
    };
    write_text(&cfg.path(REPORT_JSON_FILE), &report.to_json())?;
    write_text(&cfg.path(REPORT_MD_FILE), &report.to_markdown())?;
    Ok(report)
}

/// Runs every stage in order. Stage failures after extraction are recorded
/// in the report and the run continues; only configuration, manifest and
/// embedding-contract errors abort.
pub fn run_pipeline(cfg: &RunConfig) -> Result<EvaluationReport, PipelineError> {
    cfg.validate()?;
    stage_extract(cfg)?;
    let mut observed = Vec::new();

    let clustered = match stage_cluster(cfg) {
        Ok(_) => true,
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => {
            log::error!("cluster stage failed: {e}");
            observed.push(StageRecord::failed("cluster", e.to_string()));
            observed.push(StageRecord::not_run("label", "cluster stage failed"));
            false
        }
    };

    if clustered {
        if let Err(e) = stage_project(cfg) {
            if e.is_fatal() {
                return Err(e);
            }
            log::error!("project stage failed: {e}");
            observed.push(StageRecord::failed("project", e.to_string()));
        }
        if let Err(e) = stage_summarize(cfg) {
            if e.is_fatal() {
                return Err(e);
            }
            log::error!("summarize stage failed: {e}");
            observed.push(StageRecord::failed("summary_positive", e.to_string()));
            observed.push(StageRecord::failed("summary_negative", e.to_string()));
        }
    } else {
        observed.push(StageRecord::not_run("project", "cluster stage failed"));
    }

    let report = evaluate_with(cfg, &observed)?;
    for s in report.stages.iter().filter(|s| s.status != StageStatus::Ok) {
        log::info!(
            "stage {}: {:?} {}",
            s.stage,
            s.status,
            s.message.as_deref().unwrap_or("")
        );
    }
    Ok(report)
}
