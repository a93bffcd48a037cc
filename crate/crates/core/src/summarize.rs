//! Polarity-specific summaries: strengths from the Positive cluster,
//! limitations from the Negative cluster, and the same two views of the
//! target's full text.
//!
//! Generation goes through [`TextGenerator`]; the bundled remote client speaks
//! `POST {base_url}/generate` with `{"prompt", "max_tokens", "temperature"}`
//! and expects `{"text": ...}` back. In offline mode citation summaries fall
//! back to an extractive centroid summary instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::embed::{cosine_similarity, EmbedError, Embedder, EmbeddingVector};
use crate::extract::{find_marker_groups, CitationContext};
use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};

pub const DEFAULT_MAX_CHUNK_CHARS: usize = 12_000;
pub const DEFAULT_EXTRACTIVE_SENTENCES: usize = 3;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("missing placeholder: {0}")]
    MissingPlaceholder(String),
    #[error("no statements for polarity {0}")]
    NoStatements(Polarity),
    #[error("target full text required")]
    FullTextRequired,
    #[error("full-text summaries need a generation endpoint and cannot run in offline mode")]
    OfflineFullText,
    #[error("no generation endpoint configured; pass one or run in offline mode")]
    NoGenerator,
    #[error("generation request failed: {0}")]
    Http(#[from] HttpError),
    #[error("generation response malformed: {0}")]
    Malformed(String),
    #[error("generation returned empty text")]
    EmptyResponse,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("reading template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];

    pub fn lowercase(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "Positive",
            Polarity::Negative => "Negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarySource {
    Citations,
    FullText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryProvider {
    RemoteLlm,
    ExtractiveFallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub paper_id: String,
    pub polarity: Polarity,
    pub source: SummarySource,
    pub text: String,
    pub cited_refs: BTreeSet<u32>,
    pub provider: SummaryProvider,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub template_text: String,
    pub max_tokens: u32,
}

/// A `{name}` placeholder occurrence: byte range and name.
fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
                .count();
            let close = i + 1 + name_len;
            if name_len > 0 && close < bytes.len() && bytes[close] == b'}' {
                out.push((i, close + 1, &text[i + 1..close]));
                i = close + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, template_text: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            name: name.into(),
            template_text: template_text.into(),
            max_tokens,
        }
    }

    /// Distinct placeholder names in order of first use.
    pub fn placeholder_names(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for (_, _, name) in placeholders(&self.template_text) {
            if !seen.iter().any(|s: &String| s == name) {
                seen.push(name.to_string());
            }
        }
        seen
    }
}

/// Substitutes every `{name}` in one pass. Substituted values are never
/// rescanned, so braces inside them come through literally.
pub fn render_prompt(
    template: &PromptTemplate,
    fill: &BTreeMap<String, String>,
) -> Result<String, SummarizeError> {
    let text = &template.template_text;
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, name) in placeholders(text) {
        let value = fill
            .get(name)
            .ok_or_else(|| SummarizeError::MissingPlaceholder(name.to_string()))?;
        out.push_str(&text[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Numbered list of statements, each with its bracket markers intact.
pub fn format_statements(contexts: &[CitationContext]) -> String {
    contexts
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub cluster: PromptTemplate,
    pub fulltext_chunk: PromptTemplate,
    pub fulltext_reduce: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            cluster: PromptTemplate::new(
                "cluster",
                include_str!("../data/templates/cluster.txt"),
                512,
            ),
            fulltext_chunk: PromptTemplate::new(
                "fulltext_chunk",
                include_str!("../data/templates/fulltext_chunk.txt"),
                512,
            ),
            fulltext_reduce: PromptTemplate::new(
                "fulltext_reduce",
                include_str!("../data/templates/fulltext_reduce.txt"),
                512,
            ),
        }
    }
}

impl TemplateSet {
    /// Loads `cluster.txt`, `fulltext_chunk.txt` and `fulltext_reduce.txt`
    /// from `dir`; any file that is absent keeps the bundled default.
    pub fn load_dir(dir: &Path) -> Result<Self, SummarizeError> {
        let mut set = Self::default();
        for tpl in [
            &mut set.cluster,
            &mut set.fulltext_chunk,
            &mut set.fulltext_reduce,
        ] {
            let path = dir.join(format!("{}.txt", tpl.name));
            if path.exists() {
                tpl.template_text = std::fs::read_to_string(&path).map_err(|source| {
                    SummarizeError::TemplateIo {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub base_url: String,
    pub auth_env_var: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl GenerationConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            auth_env_var: None,
            max_tokens: 512,
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate(
        &self,
        prompt: &str,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<String, SummarizeError>;
}

pub struct RemoteGenerator {
    url: String,
    client: JsonClient,
}

impl RemoteGenerator {
    pub fn new(cfg: &GenerationConfig) -> Self {
        let policy = RetryPolicy {
            max_retries: cfg.max_retries,
            backoff_base: cfg.backoff_base,
            timeout: cfg.timeout,
        };
        Self {
            url: join_url(&cfg.base_url, "generate"),
            client: JsonClient::new(cfg.auth_env_var.as_deref(), policy),
        }
    }
}

impl TextGenerator for RemoteGenerator {
    fn generate(
        &self,
        prompt: &str,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<String, SummarizeError> {
        let body = json!({ "prompt": prompt, "max_tokens": max_tokens, "temperature": temperature.max(0.0) });
        let resp = self.client.post(&self.url, &body)?;
        let text = resp
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| SummarizeError::Malformed("missing \"text\" field".into()))?;
        Ok(text.to_string())
    }
}

/// Picks the `k_sentences` contexts closest (cosine) to the centroid of
/// their embeddings and joins them in corpus order. The result depends only
/// on the set of contexts, not on their input order.
pub fn extractive_summary(
    contexts: &[CitationContext],
    k_sentences: usize,
    embedder: &dyn Embedder,
) -> Result<String, SummarizeError> {
    let mut ordered: Vec<&CitationContext> = contexts.iter().collect();
    ordered.sort_by(|a, b| a.corpus_key().cmp(&b.corpus_key()));
    let k = k_sentences.max(1);
    if ordered.is_empty() {
        return Ok(String::new());
    }
    if k >= ordered.len() {
        return Ok(join_texts(&ordered));
    }
    let texts: Vec<String> = ordered.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let centroid = mean_vector(&vectors)?;
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .map(|v| cosine_similarity(v, &centroid))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .enumerate()
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = scored.iter().take(k).map(|(i, _)| *i).collect();
    chosen.sort_unstable();
    Ok(join_texts(
        &chosen.iter().map(|&i| ordered[i]).collect::<Vec<_>>(),
    ))
}

fn join_texts(contexts: &[&CitationContext]) -> String {
    contexts
        .iter()
        .map(|c| c.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn mean_vector(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbedError> {
    let dim = vectors.first().ok_or(EmbedError::EmptyInput)?.dim();
    let mut sum = vec![0.0f64; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(EmbedError::DimensionMismatch {
                left: dim,
                right: v.dim(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    EmbeddingVector::new(sum.into_iter().map(|s| s / n).collect())
}

/// Splits text into pieces of at most `max_chars` characters, breaking at
/// the last whitespace inside each window when there is one.
pub fn chunk_text(text: &str, max_chars: usize) -> Vec<String> {
    let chars: Vec<char> = text.trim().chars().collect();
    let max_chars = max_chars.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = (start + max_chars).min(chars.len());
        if end < chars.len() {
            if let Some(ws) = chars[start..end].iter().rposition(|c| c.is_whitespace()) {
                if ws > 0 {
                    end = start + ws;
                }
            }
        }
        let piece: String = chars[start..end].iter().collect();
        let piece = piece.trim();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
        start = end;
        while start < chars.len() && chars[start].is_whitespace() {
            start += 1;
        }
    }
    out
}

/// Numbers in `text`'s bracket markers that also occur in the contexts.
pub fn cited_refs(text: &str, contexts: &[CitationContext]) -> BTreeSet<u32> {
    let allowed: BTreeSet<u32> = contexts.iter().flat_map(|c| c.all_numbers()).collect();
    find_marker_groups(text)
        .0
        .into_iter()
        .flat_map(|g| g.numbers)
        .filter(|n| allowed.contains(n))
        .collect()
}

pub struct Summarizer<'a> {
    pub templates: TemplateSet,
    pub generator: Option<&'a dyn TextGenerator>,
    pub embedder: &'a dyn Embedder,
    pub offline: bool,
    pub k_sentences: usize,
    pub max_chunk_chars: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl<'a> Summarizer<'a> {
    pub fn new(
        embedder: &'a dyn Embedder,
        generator: Option<&'a dyn TextGenerator>,
        offline: bool,
    ) -> Self {
        Self {
            templates: TemplateSet::default(),
            generator,
            embedder,
            offline,
            k_sentences: DEFAULT_EXTRACTIVE_SENTENCES,
            max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS,
            max_tokens: 512,
            temperature: 0.0,
        }
    }

    fn fill(&self, title: &str, polarity: Polarity) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("paper_title".to_string(), title.to_string()),
            ("polarity".to_string(), polarity.lowercase().to_string()),
        ])
    }

    fn call(
        &self,
        template: &PromptTemplate,
        fill: &BTreeMap<String, String>,
    ) -> Result<String, SummarizeError> {
        let generator = self.generator.ok_or(SummarizeError::NoGenerator)?;
        let prompt = render_prompt(template, fill)?;
        let text = generator.generate(
            &prompt,
            template.max_tokens.min(self.max_tokens),
            self.temperature,
        )?;
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(SummarizeError::EmptyResponse);
        }
        Ok(text)
    }

    /// Summarizes one sentiment cluster's statements.
    pub fn summarize_cluster(
        &self,
        contexts: &[CitationContext],
        polarity: Polarity,
        target: &crate::corpus::TargetPaper,
    ) -> Result<Summary, SummarizeError> {
        if contexts.is_empty() {
            return Err(SummarizeError::NoStatements(polarity));
        }
        let (text, provider) = if self.offline {
            (
                extractive_summary(contexts, self.k_sentences, self.embedder)?,
                SummaryProvider::ExtractiveFallback,
            )
        } else {
            let mut fill = self.fill(&target.title, polarity);
            fill.insert("statements".into(), format_statements(contexts));
            (
                self.call(&self.templates.cluster, &fill)?,
                SummaryProvider::RemoteLlm,
            )
        };
        Ok(Summary {
            paper_id: target.id.clone(),
            polarity,
            source: SummarySource::Citations,
            cited_refs: cited_refs(&text, contexts),
            text,
            provider,
        })
    }

    /// Summarizes the target's own full text: each chunk separately, then
    /// the chunk summaries together. A text that fits in one chunk takes a
    /// single call.
    pub fn summarize_fulltext(
        &self,
        target: &crate::corpus::TargetPaper,
        polarity: Polarity,
    ) -> Result<Summary, SummarizeError> {
        let full_text = target
            .full_text
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .ok_or(SummarizeError::FullTextRequired)?;
        if self.offline {
            return Err(SummarizeError::OfflineFullText);
        }
        let chunks = chunk_text(full_text, self.max_chunk_chars);
        let mut partials = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            let mut fill = self.fill(&target.title, polarity);
            fill.insert("full_text".into(), chunk.clone());
            partials.push(self.call(&self.templates.fulltext_chunk, &fill)?);
        }
        let text = if partials.len() == 1 {
            partials.pop().expect("one partial")
        } else {
            let mut fill = self.fill(&target.title, polarity);
            fill.insert("full_text".into(), partials.join("\n\n"));
            self.call(&self.templates.fulltext_reduce, &fill)?
        };
        Ok(Summary {
            paper_id: target.id.clone(),
            polarity,
            source: SummarySource::FullText,
            text,
            cited_refs: BTreeSet::new(),
            provider: SummaryProvider::RemoteLlm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TargetPaper;
    use crate::embed::HashedEmbedder;
    use crate::extract::find_marker_groups;
    use proptest::prelude::*;
    use std::sync::Mutex;

    struct Recorder {
        prompts: Mutex<Vec<String>>,
    }

    impl Recorder {
        fn new() -> Self {
            Self {
                prompts: Mutex::new(Vec::new()),
            }
        }
    }

    impl TextGenerator for Recorder {
        fn generate(&self, prompt: &str, _: u32, _: f64) -> Result<String, SummarizeError> {
            let mut p = self.prompts.lock().unwrap();
            p.push(prompt.to_string());
            Ok(format!("summary {} citing [55] and [999]", p.len()))
        }
    }

    fn ctx(doc: usize, idx: usize, text: &str) -> CitationContext {
        CitationContext {
            doc_id: format!("d{doc}"),
            doc_position: doc,
            sentence_index: idx,
            text: text.into(),
            marker_groups: find_marker_groups(text).0,
            target_numbers: find_marker_groups(text)
                .0
                .into_iter()
                .flat_map(|g| g.numbers)
                .collect(),
            manual: false,
        }
    }

    fn fill(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn renders_statements_with_markers() {
        let t = PromptTemplate::new(
            "t",
            "Summarize the {polarity} aspects of {paper_title}: {statements}",
            100,
        );
        let statements = format_statements(&[
            ctx(0, 0, "RRF reproduces races [55]."),
            ctx(0, 1, "It is slow [55, 60]."),
        ]);
        let out = render_prompt(
            &t,
            &fill(&[
                ("polarity", "positive"),
                ("paper_title", "RRF"),
                ("statements", &statements),
            ]),
        )
        .unwrap();
        assert_eq!(
            out,
            "Summarize the positive aspects of RRF: 1. RRF reproduces races [55].\n2. It is slow [55, 60]."
        );
    }

    #[test]
    fn missing_placeholder_is_named() {
        let t = PromptTemplate::new("t", "{polarity} {statements}", 100);
        let err = render_prompt(&t, &fill(&[("polarity", "x")])).unwrap_err();
        assert_eq!(err.to_string(), "missing placeholder: statements");
    }

    #[test]
    fn braces_in_values_are_literal() {
        let t = PromptTemplate::new("t", "A {statements} B {not a placeholder} {}", 100);
        let out = render_prompt(&t, &fill(&[("statements", "{polarity} {{x}}")])).unwrap();
        assert_eq!(out, "A {polarity} {{x}} B {not a placeholder} {}");
    }

    #[test]
    fn bundled_templates_use_known_placeholders() {
        let set = TemplateSet::default();
        assert_eq!(
            set.cluster.placeholder_names(),
            ["paper_title", "polarity", "statements"]
        );
        assert_eq!(
            set.fulltext_chunk.placeholder_names(),
            ["paper_title", "full_text", "polarity"]
        );
        assert_eq!(
            set.fulltext_reduce.placeholder_names(),
            ["polarity", "paper_title", "full_text"]
        );
    }

    #[test]
    fn extractive_single_and_clamp() {
        let e = HashedEmbedder::new(64).unwrap();
        let one = [ctx(0, 0, "Only one [1].")];
        assert_eq!(extractive_summary(&one, 1, &e).unwrap(), "Only one [1].");
        let many = [ctx(1, 0, "B second [2]."), ctx(0, 3, "A first [1].")];
        assert_eq!(
            extractive_summary(&many, 5, &e).unwrap(),
            "A first [1]. B second [2]."
        );
    }

    #[test]
    fn extractive_picks_centroid_argmax() {
        let e = HashedEmbedder::new(128).unwrap();
        let cs = [
            ctx(0, 0, "race detection tool for processes [1]."),
            ctx(0, 1, "race detection for processes and threads [1]."),
            ctx(0, 2, "completely unrelated gardening advice [1]."),
        ];
        // Brute force: embed all, centroid, argmax cosine.
        let texts: Vec<String> = cs.iter().map(|c| c.text.clone()).collect();
        let vecs = e.embed(&texts).unwrap();
        let centroid = mean_vector(&vecs).unwrap();
        let best = (0..3)
            .max_by(|&a, &b| {
                cosine_similarity(&vecs[a], &centroid)
                    .unwrap()
                    .total_cmp(&cosine_similarity(&vecs[b], &centroid).unwrap())
            })
            .unwrap();
        assert_eq!(extractive_summary(&cs, 1, &e).unwrap(), cs[best].text);
    }

    #[test]
    fn offline_cluster_summary_is_extractive() {
        let e = HashedEmbedder::new(64).unwrap();
        let s = Summarizer::new(&e, None, true);
        let target = TargetPaper::new("rrf", "RRF", None).unwrap();
        let cs = [
            ctx(0, 0, "RRF reproduces races [55]."),
            ctx(1, 0, "RRF is effective [12]."),
        ];
        let sum = s
            .summarize_cluster(&cs, Polarity::Positive, &target)
            .unwrap();
        assert_eq!(sum.provider, SummaryProvider::ExtractiveFallback);
        assert_eq!(sum.source, SummarySource::Citations);
        assert_eq!(sum.cited_refs, [12, 55].into());
        assert!(matches!(
            s.summarize_cluster(&[], Polarity::Negative, &target),
            Err(SummarizeError::NoStatements(Polarity::Negative))
        ));
    }

    #[test]
    fn remote_cluster_summary_filters_cited_refs() {
        let e = HashedEmbedder::new(64).unwrap();
        let rec = Recorder::new();
        let s = Summarizer::new(&e, Some(&rec), false);
        let target = TargetPaper::new("rrf", "RRF", None).unwrap();
        let sum = s
            .summarize_cluster(
                &[ctx(0, 0, "RRF reproduces races [55].")],
                Polarity::Positive,
                &target,
            )
            .unwrap();
        assert_eq!(sum.provider, SummaryProvider::RemoteLlm);
        assert_eq!(sum.cited_refs, [55].into());
        assert!(rec.prompts.lock().unwrap()[0].contains("1. RRF reproduces races [55]."));
    }

    #[test]
    fn no_generator_online_is_an_error() {
        let e = HashedEmbedder::new(64).unwrap();
        let s = Summarizer::new(&e, None, false);
        let target = TargetPaper::new("rrf", "RRF", None).unwrap();
        assert!(matches!(
            s.summarize_cluster(&[ctx(0, 0, "x [1].")], Polarity::Positive, &target),
            Err(SummarizeError::NoGenerator)
        ));
    }

    #[test]
    fn fulltext_call_counts() {
        let e = HashedEmbedder::new(64).unwrap();
        let rec = Recorder::new();
        let mut s = Summarizer::new(&e, Some(&rec), false);
        s.max_chunk_chars = 20;
        let short = TargetPaper::new("t", "T", Some("tiny paper".into())).unwrap();
        s.summarize_fulltext(&short, Polarity::Positive).unwrap();
        assert_eq!(rec.prompts.lock().unwrap().len(), 1);

        let three = TargetPaper::new(
            "t",
            "T",
            Some("aaaa bbbb cccc dddd eeee ffff gggg hhhh iiii jjjj".into()),
        )
        .unwrap();
        assert_eq!(chunk_text(three.full_text.as_deref().unwrap(), 20).len(), 3);
        let sum = s.summarize_fulltext(&three, Polarity::Negative).unwrap();
        assert_eq!(rec.prompts.lock().unwrap().len(), 1 + 3 + 1);
        assert_eq!(sum.source, SummarySource::FullText);

        let missing = TargetPaper::new("t", "T", None).unwrap();
        let err = s
            .summarize_fulltext(&missing, Polarity::Positive)
            .unwrap_err();
        assert_eq!(err.to_string(), "target full text required");
        s.offline = true;
        assert!(matches!(
            s.summarize_fulltext(&short, Polarity::Positive),
            Err(SummarizeError::OfflineFullText)
        ));
    }

    #[test]
    fn chunking_respects_limit() {
        let text = "word ".repeat(100);
        for c in chunk_text(&text, 23) {
            assert!(c.chars().count() <= 23);
        }
        assert_eq!(chunk_text("abcdefghij", 4), ["abcd", "efgh", "ij"]);
        assert!(chunk_text("   ", 4).is_empty());
    }

    proptest! {
        #[test]
        fn render_length_accounting(
            pieces in proptest::collection::vec("[A-Z0-9 {}]{0,12}", 1..5),
            values in proptest::collection::vec("\\PC{0,10}", 4),
        ) {
            let names = ["paper_title", "polarity", "statements", "full_text"];
            let mut text = String::new();
            for (i, p) in pieces.iter().enumerate() {
                text.push_str(p);
                text.push(' ');
                text.push('{');
                text.push_str(names[i % 4]);
                text.push('}');
            }
            let t = PromptTemplate::new("t", text.clone(), 1);
            let f: BTreeMap<String, String> = names.iter().zip(&values).map(|(n, v)| (n.to_string(), v.clone())).collect();
            let out = render_prompt(&t, &f).unwrap();
            let occurrences = placeholders(&text);
            let removed: usize = occurrences.iter().map(|(s, e, _)| e - s).sum();
            let added: usize = occurrences.iter().map(|(_, _, n)| f[*n].len()).sum();
            prop_assert_eq!(out.len(), text.len() - removed + added);
        }

        #[test]
        fn extractive_is_permutation_stable(order in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(), k in 1usize..4) {
            let e = HashedEmbedder::new(64).unwrap();
            let base: Vec<CitationContext> = (0..6)
                .map(|i| ctx(i % 3, i, &format!("statement number {i} about races and tools [{}].", i + 1)))
                .collect();
            let shuffled: Vec<CitationContext> = order.iter().map(|&i| base[i].clone()).collect();
            let a = extractive_summary(&base, k, &e).unwrap();
            let b = extractive_summary(&shuffled, k, &e).unwrap();
            prop_assert_eq!(&a, &b);
            let input_markers: BTreeSet<String> = base.iter()
                .flat_map(|c| c.marker_groups.iter().map(|g| crate::corpus::slice_chars(&c.text, g.span)).collect::<Vec<_>>())
                .collect();
            for g in find_marker_groups(&a).0 {
                prop_assert!(input_markers.contains(&crate::corpus::slice_chars(&a, g.span)));
            }
        }
    }
}
