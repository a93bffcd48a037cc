//! Evaluation: summary similarity, cluster-count comparison and extraction
//! accounting, gathered into one serializable run report.
//!
//! `report.json` schema (all maps have string keys, sorted):
//!
//! ```text
//! schema_version   integer
//! paper_id         string
//! paper_title      string
//! generated_at     RFC 3339 timestamp (the only non-deterministic field)
//! extraction       {documents_total, documents_parsed, contexts_found,
//!                   manual_contexts, dedup_count, success_rate,
//!                   failed_documents: [{doc_id, reason}]}
//! clustering       null | {silhouette_by_k: {"2": real, ...}, selected_k,
//!                   seed, dim, provider: {kind, base_url?, dim?},
//!                   cluster_sizes: [int]}
//! labeling         null | {labels: {"0": "Positive", ...},
//!                   polarity_scores: {"0": real, ...}}
//! summaries        [{polarity, source, provider, cited_refs, characters}]
//! similarity       {"Positive": real, "Negative": real} (present pairs only)
//! mean_similarity  null | real
//! artifacts        {name: path relative to the output directory}
//! stages           [{stage, status: ok|failed|not_run, message?}]
//! warnings         [string]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{SentimentLabel, SentimentLabeling};
use crate::corpus::success_rate;
use crate::embed::{cosine_similarity, EmbedError, Embedder, ProviderDescriptor, ProviderKind};
use crate::extract::CorpusExtraction;
use crate::summarize::{Polarity, Summary, SummaryProvider, SummarySource};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("empty summary")]
    EmptySummary,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Cosine similarity of the two summaries' embeddings under one provider.
pub fn semantic_similarity(
    a: &Summary,
    b: &Summary,
    embedder: &dyn Embedder,
) -> Result<f64, EvaluateError> {
    if a.text.trim().is_empty() || b.text.trim().is_empty() {
        return Err(EvaluateError::EmptySummary);
    }
    let v = embedder.embed(&[a.text.clone(), b.text.clone()])?;
    Ok(cosine_similarity(&v[0], &v[1])?)
}

/// Citation-derived vs full-text similarity for every polarity that has
/// both summaries.
pub fn similarity_by_polarity(
    summaries: &[Summary],
    embedder: &dyn Embedder,
) -> Result<BTreeMap<Polarity, f64>, EvaluateError> {
    let mut out = BTreeMap::new();
    for polarity in Polarity::BOTH {
        let find = |source| {
            summaries
                .iter()
                .find(|s| s.polarity == polarity && s.source == source)
        };
        if let (Some(c), Some(f)) = (
            find(SummarySource::Citations),
            find(SummarySource::FullText),
        ) {
            out.insert(polarity, semantic_similarity(c, f, embedder)?);
        }
    }
    Ok(out)
}

pub fn mean_similarity(scores: &BTreeMap<Polarity, f64>) -> Option<f64> {
    if scores.is_empty() {
        None
    } else {
        Some(scores.values().sum::<f64>() / scores.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedDocument {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub documents_total: usize,
    pub documents_parsed: usize,
    pub contexts_found: usize,
    pub manual_contexts: usize,
    pub dedup_count: usize,
    pub success_rate: f64,
    pub failed_documents: Vec<FailedDocument>,
}

impl ExtractionStats {
    pub fn from_extraction(ex: &CorpusExtraction) -> Self {
        let total = ex.documents_total();
        let parsed = ex.documents_parsed();
        Self {
            documents_total: total,
            documents_parsed: parsed,
            contexts_found: ex.contexts.len(),
            manual_contexts: ex.contexts.iter().filter(|c| c.manual).count(),
            dedup_count: ex.dedup_count,
            success_rate: success_rate(parsed, total),
            failed_documents: ex
                .documents
                .iter()
                .filter_map(|d| {
                    d.failure.as_ref().map(|r| FailedDocument {
                        doc_id: d.doc_id.clone(),
                        reason: r.clone(),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub silhouette_by_k: BTreeMap<usize, f64>,
    pub selected_k: usize,
    pub seed: u64,
    pub dim: usize,
    pub provider: ProviderDescriptor,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingSummary {
    pub labels: BTreeMap<usize, SentimentLabel>,
    pub polarity_scores: BTreeMap<usize, f64>,
}

impl From<&SentimentLabeling> for LabelingSummary {
    fn from(l: &SentimentLabeling) -> Self {
        Self {
            labels: l.label_of_cluster.clone(),
            polarity_scores: l.cluster_polarity_score.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub polarity: Polarity,
    pub source: SummarySource,
    pub provider: SummaryProvider,
    pub cited_refs: BTreeSet<u32>,
    pub characters: usize,
}

impl From<&Summary> for SummaryRecord {
    fn from(s: &Summary) -> Self {
        Self {
            polarity: s.polarity,
            source: s.source,
            provider: s.provider,
            cited_refs: s.cited_refs.clone(),
            characters: s.text.chars().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl StageRecord {
    pub fn ok(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            status: StageStatus::Ok,
            message: None,
        }
    }

    pub fn failed(stage: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            status: StageStatus::Failed,
            message: Some(message.into()),
        }
    }

    pub fn not_run(stage: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            status: StageStatus::NotRun,
            message: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub paper_id: String,
    pub paper_title: String,
    pub generated_at: String,
    pub extraction: ExtractionStats,
    pub clustering: Option<ClusteringSummary>,
    pub labeling: Option<LabelingSummary>,
    pub summaries: Vec<SummaryRecord>,
    pub similarity: BTreeMap<Polarity, f64>,
    pub mean_similarity: Option<f64>,
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// 0 when every stage succeeded or was legitimately skipped, 2 when a
    /// stage failed. Fatal errors never produce a report; callers map those
    /// to 1.
    pub fn exit_code(&self) -> i32 {
        if self.stages.iter().any(|s| s.status == StageStatus::Failed) {
            2
        } else {
            0
        }
    }

    fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    fn not_run_line(&self, stages: &[&str]) -> String {
        let reason = stages
            .iter()
            .filter_map(|s| self.stage(s))
            .find(|r| r.status != StageStatus::Ok)
            .and_then(|r| r.message.clone());
        match reason {
            Some(r) => format!("not run ({r})\n"),
            None => "not run\n".to_string(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Citation sentiment report: {}\n", self.paper_title);
        let _ = writeln!(md, "- Paper id: `{}`", self.paper_id);
        let _ = writeln!(md, "- Generated: {}\n", self.generated_at);

        let e = &self.extraction;
        md.push_str("## Extraction\n\n");
        md.push_str("| Documents | Parsed | Success rate | Contexts found | Manual contexts | Duplicates removed |\n");
        md.push_str("|---:|---:|---:|---:|---:|---:|\n");
        let _ = writeln!(
            md,
            "| {} | {} | {:.3} | {} | {} | {} |\n",
            e.documents_total,
            e.documents_parsed,
            e.success_rate,
            e.contexts_found,
            e.manual_contexts,
            e.dedup_count
        );
        if !e.failed_documents.is_empty() {
            md.push_str("Documents that failed to parse:\n\n");
            for f in &e.failed_documents {
                let _ = writeln!(md, "- `{}`: {}", f.doc_id, f.reason);
            }
            md.push('\n');
        }

        md.push_str("## Cluster-count comparison\n\n");
        match &self.clustering {
            Some(c) => {
                md.push_str("| Clusters (k) | Mean silhouette |\n|---:|---:|\n");
                for (k, s) in &c.silhouette_by_k {
                    let _ = writeln!(md, "| {k} | {s:.4} |");
                }
                let _ = writeln!(md, "\nSelected k: {}\n", c.selected_k);
                let provider = match c.provider.kind {
                    ProviderKind::Remote => "remote",
                    ProviderKind::HashedFallback => "hashed fallback",
                };
                let _ = writeln!(
                    md,
                    "Embeddings: {provider}, dimension {}, seed {}.\n",
                    c.dim, c.seed
                );
            }
            None => md.push_str(&(self.not_run_line(&["cluster"]) + "\n")),
        }

        md.push_str("## Sentiment labeling\n\n");
        match (&self.labeling, &self.clustering) {
            (Some(l), Some(c)) => {
                md.push_str("| Cluster | Label | Size | Polarity score |\n|---:|---|---:|---:|\n");
                for (cluster, label) in &l.labels {
                    let size = c.cluster_sizes.get(*cluster).copied().unwrap_or(0);
                    let score = l.polarity_scores.get(cluster).copied().unwrap_or(0.0);
                    let _ = writeln!(md, "| {cluster} | {label} | {size} | {score:.4} |");
                }
                md.push('\n');
            }
            _ => md.push_str(&(self.not_run_line(&["cluster", "label"]) + "\n")),
        }

        md.push_str("## Summaries\n\n");
        if self.summaries.is_empty() {
            md.push_str(&(self.not_run_line(&["summary_positive", "summary_negative"]) + "\n"));
        } else {
            md.push_str("| Polarity | Source | Provider | Cited references | Characters |\n|---|---|---|---|---:|\n");
            for s in &self.summaries {
                let refs = s
                    .cited_refs
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(", ");
                let source = match s.source {
                    SummarySource::Citations => "citations",
                    SummarySource::FullText => "full text",
                };
                let provider = match s.provider {
                    SummaryProvider::RemoteLlm => "remote LLM",
                    SummaryProvider::ExtractiveFallback => "extractive fallback",
                };
                let _ = writeln!(
                    md,
                    "| {} | {source} | {provider} | {refs} | {} |",
                    s.polarity, s.characters
                );
            }
            md.push('\n');
        }

        md.push_str("## Summary similarity (citations vs full text)\n\n");
        if self.similarity.is_empty() {
            md.push_str(
                &(self.not_run_line(&["similarity", "fulltext_positive", "fulltext_negative"])
                    + "\n"),
            );
        } else {
            md.push_str("| Polarity | Sim. Score |\n|---|---:|\n");
            for (p, s) in &self.similarity {
                let _ = writeln!(md, "| {p} | {s:.2} |");
            }
            if let Some(m) = self.mean_similarity {
                let _ = writeln!(md, "| Mean | {m:.2} |");
            }
            md.push('\n');
        }

        md.push_str("## Stages\n\n| Stage | Status | Detail |\n|---|---|---|\n");
        for s in &self.stages {
            let status = match s.status {
                StageStatus::Ok => "ok",
                StageStatus::Failed => "failed",
                StageStatus::NotRun => "not run",
            };
            let _ = writeln!(
                md,
                "| {} | {status} | {} |",
                s.stage,
                s.message.as_deref().unwrap_or("")
            );
        }
        md.push('\n');

        if !self.artifacts.is_empty() {
            md.push_str("## Artifacts\n\n");
            for (name, path) in &self.artifacts {
                let _ = writeln!(md, "- {name}: `{path}`");
            }
            md.push('\n');
        }

        if !self.warnings.is_empty() {
            md.push_str("## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(md, "- {w}");
            }
            md.push('\n');
        }

        md.push_str("## Manual rubric (fill in by hand)\n\n");
        md.push_str(
            "Scores from 1 to 5, assigned by a human reader. The tool does not fill these in.\n\n",
        );
        md.push_str("| Summary | Conceptual | Factual | Informativeness |\n|---|---|---|---|\n");
        for p in Polarity::BOTH {
            let _ = writeln!(md, "| {p}, citations |  |  |  |");
            let _ = writeln!(md, "| {p}, full text |  |  |  |");
        }
        md
    }
}

/// Current UTC time for `generated_at`.
pub fn timestamp_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
