//! Citation-context extraction: bracketed numeric markers, target resolution
//! against the bibliography, and trimming enumerations down to the clauses
//! that cite the target.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, TargetPaper};
use crate::textprep::{CleanedStatement, StopwordList};

/// Longest range accepted inside one marker, e.g. `[1-5000]`.
pub const MAX_RANGE_LEN: u32 = 5000;

/// Minimum fraction of title tokens that must occur in a bibliography entry.
pub const TITLE_MATCH_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("empty item in marker")]
    EmptyItem,
    #[error("non-numeric item {0:?} in marker")]
    NotNumeric(String),
    #[error("reference number 0 in marker")]
    Zero,
    #[error("reversed range {start}-{end} in marker")]
    ReversedRange { start: u32, end: u32 },
    #[error("range {start}-{end} is implausibly long")]
    RangeTooLong { start: u32, end: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerGroup {
    /// Character offsets of the whole `[...]` group within the sentence.
    pub span: (usize, usize),
    pub numbers: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationContext {
    pub doc_id: String,
    /// Position of the source document in the corpus (manifest order).
    pub doc_position: usize,
    pub sentence_index: usize,
    pub text: String,
    pub marker_groups: Vec<MarkerGroup>,
    pub target_numbers: BTreeSet<u32>,
    /// Supplied by hand through a merge file rather than extracted.
    #[serde(default)]
    pub manual: bool,
}

impl CitationContext {
    /// Union of every number cited in the sentence.
    pub fn all_numbers(&self) -> BTreeSet<u32> {
        self.marker_groups
            .iter()
            .flat_map(|g| g.numbers.iter().copied())
            .collect()
    }

    /// Sort key used wherever corpus order matters.
    pub fn corpus_key(&self) -> (usize, bool, usize, &str) {
        (
            self.doc_position,
            self.manual,
            self.sentence_index,
            &self.text,
        )
    }
}

/// Expands the inside of one bracket pair, e.g. `49-55,63-65,117`.
pub fn expand_marker(marker_text: &str) -> Result<BTreeSet<u32>, MarkerError> {
    let compact: String = marker_text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| if c == '\u{2013}' { '-' } else { c })
        .collect();
    let mut out = BTreeSet::new();
    for item in compact.split(',') {
        if item.is_empty() {
            return Err(MarkerError::EmptyItem);
        }
        match item.split_once('-') {
            None => {
                out.insert(parse_number(item)?);
            }
            Some((a, b)) => {
                let (start, end) = (parse_number(a)?, parse_number(b)?);
                if start > end {
                    return Err(MarkerError::ReversedRange { start, end });
                }
                if end - start >= MAX_RANGE_LEN {
                    return Err(MarkerError::RangeTooLong { start, end });
                }
                out.extend(start..=end);
            }
        }
    }
    Ok(out)
}

fn parse_number(s: &str) -> Result<u32, MarkerError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(MarkerError::NotNumeric(s.to_string()));
    }
    match s.parse::<u32>() {
        Ok(0) => Err(MarkerError::Zero),
        Ok(n) => Ok(n),
        Err(_) => Err(MarkerError::NotNumeric(s.to_string())),
    }
}

static BRACKETS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\[\]]*)\]").unwrap());
static AUTHOR_YEAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\(\s*[A-Z][\p{L}'\-]+(?:\s+(?:et\s+al\.|and\s+[A-Z][\p{L}'\-]+))?,?\s+(?:19|20)\d{2}[a-z]?\s*[;)]")
        .unwrap()
});

/// Finds the numeric bracket groups of a sentence. Brackets holding anything
/// other than digits, commas, dashes and spaces are not citation markers and
/// are ignored; numeric-looking groups that fail to expand are reported.
pub fn find_marker_groups(sentence: &str) -> (Vec<MarkerGroup>, Vec<String>) {
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for caps in BRACKETS.captures_iter(sentence) {
        let inner = &caps[1];
        let numeric_looking = inner.chars().any(|c| c.is_ascii_digit())
            && inner.chars().all(|c| {
                c.is_ascii_digit() || c.is_whitespace() || matches!(c, ',' | '-' | '\u{2013}')
            });
        if !numeric_looking {
            continue;
        }
        let whole = caps.get(0).unwrap();
        match expand_marker(inner) {
            Ok(numbers) => {
                let start = sentence[..whole.start()].chars().count();
                let len = whole.as_str().chars().count();
                groups.push(MarkerGroup {
                    span: (start, start + len),
                    numbers,
                });
            }
            Err(e) => warnings.push(format!("marker {} skipped: {e}", whole.as_str())),
        }
    }
    (groups, warnings)
}

fn normalized_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Fraction of the title's tokens (as a multiset, order ignored) found in
/// the entry.
pub fn title_overlap(title: &str, entry: &str) -> f64 {
    let title_tokens = normalized_tokens(title);
    if title_tokens.is_empty() {
        return 0.0;
    }
    let mut available: HashMap<String, usize> = HashMap::new();
    for t in normalized_tokens(entry) {
        *available.entry(t).or_default() += 1;
    }
    let mut covered = 0usize;
    for t in &title_tokens {
        if let Some(n) = available.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                covered += 1;
            }
        }
    }
    covered as f64 / title_tokens.len() as f64
}

/// Reference numbers whose bibliography entry matches the target title.
pub fn resolve_target_reference(doc: &Document, target: &TargetPaper) -> BTreeSet<u32> {
    doc.references
        .iter()
        .filter(|r| title_overlap(&target.title, &r.raw_string) >= TITLE_MATCH_THRESHOLD)
        .map(|r| r.number)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentExtraction {
    pub contexts: Vec<CitationContext>,
    pub dedup_count: usize,
    pub warnings: Vec<String>,
}

/// Collects the sentences of `doc` whose markers cite any of
/// `target_numbers`. Sentences whose cleaned text repeats an earlier one in
/// the same document are dropped and counted.
pub fn extract_citation_contexts(
    doc: &Document,
    doc_position: usize,
    target_numbers: &BTreeSet<u32>,
    stopwords: &StopwordList,
) -> DocumentExtraction {
    let mut out = DocumentExtraction::default();
    let mut seen = HashSet::new();
    let mut any_marker = false;
    for sentence in &doc.sentences {
        let (groups, warnings) = find_marker_groups(&sentence.text);
        out.warnings.extend(warnings);
        any_marker |= !groups.is_empty();
        let hits: BTreeSet<u32> = groups
            .iter()
            .flat_map(|g| g.numbers.intersection(target_numbers).copied())
            .collect();
        if hits.is_empty() {
            continue;
        }
        if !seen.insert(crate::textprep::clean_text(&sentence.text, stopwords).join(" ")) {
            out.dedup_count += 1;
            continue;
        }
        out.contexts.push(CitationContext {
            doc_id: doc.id.clone(),
            doc_position,
            sentence_index: sentence.index,
            text: sentence.text.clone(),
            marker_groups: groups,
            target_numbers: hits,
            manual: false,
        });
    }
    if !any_marker && doc.sentences.iter().any(|s| AUTHOR_YEAR.is_match(&s.text)) {
        out.warnings
            .push("author-year citation style is not supported; document skipped".into());
    }
    out
}

const CUES: &[&str] = &[
    "including",
    "include",
    "includes",
    "such as",
    "like",
    "e.g.",
    "namely",
    "from",
    "for example",
    "for instance",
    "via",
    "using",
    ":",
];

struct Segment {
    start: usize,
    end: usize,
    delimiter: Option<char>,
}

fn split_top_level(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' | ';' if depth <= 0 => {
                segments.push(Segment {
                    start,
                    end: i,
                    delimiter: Some(c),
                });
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    segments.push(Segment {
        start,
        end: body.len(),
        delimiter: None,
    });
    segments
}

fn ends_with_marker(segment: &str) -> Option<BTreeSet<u32>> {
    let trimmed = segment.trim_end();
    if !trimmed.ends_with(']') {
        return None;
    }
    let open = trimmed.rfind('[')?;
    expand_marker(&trimmed[open + 1..trimmed.len() - 1]).ok()
}

fn numbers_in(segment: &str) -> BTreeSet<u32> {
    find_marker_groups(segment)
        .0
        .into_iter()
        .flat_map(|g| g.numbers)
        .collect()
}

/// Byte offset just past the last cue phrase (and following whitespace) in
/// `segment`, if any cue occurs before its final marker.
fn after_last_cue(segment: &str) -> Option<usize> {
    let lower = segment.to_lowercase();
    if lower.len() != segment.len() {
        return None;
    }
    let limit = segment.rfind('[').unwrap_or(segment.len());
    let mut best: Option<usize> = None;
    for cue in CUES {
        for (pos, _) in lower[..limit].match_indices(cue) {
            let end = pos + cue.len();
            let word_start = pos == 0 || !lower[..pos].ends_with(|c: char| c.is_alphanumeric());
            let word_end = *cue == ":" || !lower[end..].starts_with(|c: char| c.is_alphanumeric());
            if word_start && word_end {
                let ws = lower[end..].len() - lower[end..].trim_start().len();
                best = best.max(Some(end + ws));
            }
        }
    }
    best.filter(|&b| b < limit)
}

fn strip_conjunction(unit: &str) -> &str {
    for conj in ["and ", "or ", "as well as "] {
        if let Some(rest) = unit.strip_prefix(conj) {
            return rest.trim_start();
        }
    }
    unit
}

/// Trims an enumeration sentence ("head ... A [1], B [2], and C [3].") to
/// the head plus the units citing the target. Anything without that shape
/// comes back unchanged.
pub fn trim_context(ctx: &CitationContext) -> CitationContext {
    match trim_sentence(&ctx.text, &ctx.target_numbers) {
        Some(text) => {
            let (marker_groups, _) = find_marker_groups(&text);
            let cited: BTreeSet<u32> = marker_groups
                .iter()
                .flat_map(|g| g.numbers.iter().copied())
                .collect();
            let target_numbers: BTreeSet<u32> =
                ctx.target_numbers.intersection(&cited).copied().collect();
            debug_assert!(!target_numbers.is_empty());
            CitationContext {
                text,
                marker_groups,
                target_numbers,
                ..ctx.clone()
            }
        }
        None => ctx.clone(),
    }
}

fn trim_sentence(text: &str, target: &BTreeSet<u32>) -> Option<String> {
    let body_end = text
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?') || c.is_whitespace())
        .len();
    let (body, tail) = text.split_at(body_end);
    let segments = split_top_level(body);

    let run_len = segments
        .iter()
        .rev()
        .take_while(|s| ends_with_marker(&body[s.start..s.end]).is_some())
        .count();
    if run_len < 2 {
        return None;
    }
    let first = segments.len() - run_len;
    let first_seg = &segments[first];
    let unit_start = match after_last_cue(&body[first_seg.start..first_seg.end]) {
        Some(off) => first_seg.start + off,
        None if first > 0 => {
            let seg = &body[first_seg.start..first_seg.end];
            first_seg.start + (seg.len() - seg.trim_start().len())
        }
        None => return None,
    };

    let mut units: Vec<(&str, Option<char>)> = Vec::with_capacity(run_len);
    units.push((body[unit_start..first_seg.end].trim(), first_seg.delimiter));
    for s in &segments[first + 1..] {
        units.push((body[s.start..s.end].trim(), s.delimiter));
    }
    let kept: Vec<&str> = units
        .iter()
        .filter(|(u, _)| !numbers_in(u).is_disjoint(target))
        .map(|(u, _)| strip_conjunction(u))
        .collect();
    if kept.is_empty() || kept.len() == units.len() {
        return None;
    }
    let separator = if units.iter().any(|(_, d)| *d == Some(',')) {
        ", "
    } else {
        "; "
    };
    Some(format!(
        "{}{}{}",
        &body[..unit_start],
        kept.join(separator),
        tail.trim_end()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub doc_id: String,
    pub source_path: String,
    pub parsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub target_numbers: BTreeSet<u32>,
    pub contexts_found: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusExtraction {
    pub documents: Vec<DocumentReport>,
    pub contexts: Vec<CitationContext>,
    pub statements: Vec<CleanedStatement>,
    pub dedup_count: usize,
}

impl CorpusExtraction {
    pub fn documents_total(&self) -> usize {
        self.documents.len()
    }

    pub fn documents_parsed(&self) -> usize {
        self.documents.iter().filter(|d| d.parsed).count()
    }
}

/// Runs extraction and trimming over a whole corpus, then removes
/// cross-document duplicates by cleaned text. `contexts` and `statements`
/// stay index-aligned.
pub fn extract_corpus(corpus: &Corpus, stopwords: &StopwordList) -> CorpusExtraction {
    use rayon::prelude::*;

    let per_doc: Vec<(DocumentReport, DocumentExtraction)> = corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(position, doc)| {
            let mut warnings = doc.warnings.clone();
            let (targets, extraction) = if doc.status.is_parsed() {
                let targets = resolve_target_reference(doc, &corpus.target);
                if targets.is_empty() {
                    warnings.push("no bibliography entry matches the target title".into());
                    (targets, DocumentExtraction::default())
                } else {
                    let ex = extract_citation_contexts(doc, position, &targets, stopwords);
                    (targets, ex)
                }
            } else {
                (BTreeSet::new(), DocumentExtraction::default())
            };
            warnings.extend(extraction.warnings.iter().cloned());
            let failure = match &doc.status {
                crate::corpus::DocumentStatus::ParseFailed { reason } => Some(reason.clone()),
                crate::corpus::DocumentStatus::Parsed => None,
            };
            let report = DocumentReport {
                doc_id: doc.id.clone(),
                source_path: doc.source_path.clone(),
                parsed: failure.is_none(),
                failure,
                target_numbers: targets,
                contexts_found: extraction.contexts.len(),
                warnings,
            };
            (report, extraction)
        })
        .collect();

    let mut documents = Vec::with_capacity(per_doc.len());
    let mut candidates = Vec::new();
    let mut dedup_count = 0;
    for (report, extraction) in per_doc {
        dedup_count += extraction.dedup_count;
        candidates.extend(extraction.contexts.iter().map(trim_context));
        documents.push(report);
    }
    let (contexts, statements, cross_doc) = align_and_dedup(candidates, stopwords);
    CorpusExtraction {
        documents,
        contexts,
        statements,
        dedup_count: dedup_count + cross_doc,
    }
}

/// Cleans each context and drops repeats of earlier cleaned text.
pub fn align_and_dedup(
    contexts: Vec<CitationContext>,
    stopwords: &StopwordList,
) -> (Vec<CitationContext>, Vec<CleanedStatement>, usize) {
    let mut seen = HashSet::new();
    let mut kept_ctx = Vec::new();
    let mut kept_stmt = Vec::new();
    let mut removed = 0;
    for ctx in contexts {
        let stmt = CleanedStatement::new(&ctx.doc_id, ctx.sentence_index, &ctx.text, stopwords);
        if seen.insert(stmt.cleaned_text.clone()) {
            kept_ctx.push(ctx);
            kept_stmt.push(stmt);
        } else {
            removed += 1;
        }
    }
    (kept_ctx, kept_stmt, removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("manual context line {line}: {message}")]
pub struct ManualContextError {
    pub line: usize,
    pub message: String,
}

/// Parses a hand-written merge file: one `doc_id<TAB>sentence` per line,
/// blank lines and `#` comments ignored.
pub fn parse_manual_contexts(
    text: &str,
) -> Result<Vec<(usize, String, String)>, ManualContextError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let Some((doc_id, sentence)) = line.split_once('\t') else {
            return Err(ManualContextError {
                line: line_no,
                message: "expected doc_id<TAB>sentence".into(),
            });
        };
        let (doc_id, sentence) = (doc_id.trim(), sentence.trim());
        if doc_id.is_empty() || sentence.is_empty() {
            return Err(ManualContextError {
                line: line_no,
                message: "empty doc id or sentence".into(),
            });
        }
        out.push((line_no, doc_id.to_string(), sentence.to_string()));
    }
    Ok(out)
}

/// Builds contexts from parsed manual lines. Each sentence must carry at
/// least one numeric marker; its target numbers are the document's resolved
/// targets when those appear in the sentence, otherwise every cited number.
pub fn manual_contexts(
    lines: &[(usize, String, String)],
    extraction: &CorpusExtraction,
) -> (Vec<CitationContext>, Vec<String>) {
    let mut contexts = Vec::new();
    let mut warnings = Vec::new();
    for (line_no, doc_id, sentence) in lines {
        let (marker_groups, w) = find_marker_groups(sentence);
        warnings.extend(w);
        if marker_groups.is_empty() {
            warnings.push(format!(
                "manual line {line_no}: no numeric citation marker; skipped"
            ));
            continue;
        }
        let cited: BTreeSet<u32> = marker_groups
            .iter()
            .flat_map(|g| g.numbers.iter().copied())
            .collect();
        let doc = extraction
            .documents
            .iter()
            .position(|d| &d.doc_id == doc_id);
        let resolved: BTreeSet<u32> = doc
            .map(|p| {
                extraction.documents[p]
                    .target_numbers
                    .intersection(&cited)
                    .copied()
                    .collect()
            })
            .unwrap_or_default();
        contexts.push(CitationContext {
            doc_id: doc_id.clone(),
            doc_position: doc.unwrap_or(extraction.documents.len()),
            sentence_index: *line_no,
            text: sentence.clone(),
            marker_groups,
            target_numbers: if resolved.is_empty() { cited } else { resolved },
            manual: true,
        });
    }
    (contexts, warnings)
}
