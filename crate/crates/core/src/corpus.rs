//! Corpus ingestion: the target paper record, citing-document texts, sentence
//! segmentation and numbered reference-list parsing.
//!
//! The ingestion boundary is plain UTF-8 text. A manifest (TOML) names the
//! target paper and one text file per citing document:
//!
//! ```toml
//! [target]
//! id = "rrf"
//! title = "RRF: A Race Reproduction Framework for Finding Process-Level Races"
//! full_text_path = "target.txt"   # optional
//!
//! [[documents]]
//! id = "doc01"
//! path = "docs/doc01.txt"
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest not found or unreadable: {path}: {source}")]
    ManifestIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    ManifestSchema { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPaper {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text: Option<String>,
}

impl TargetPaper {
    /// Builds a target record, rejecting titles that are blank after
    /// whitespace normalization.
    pub fn new(id: impl Into<String>, title: &str, full_text: Option<String>) -> Option<Self> {
        let title = collapse_whitespace(title);
        if title.is_empty() {
            return None;
        }
        Some(Self {
            id: id.into(),
            title,
            full_text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DocumentStatus {
    Parsed,
    ParseFailed { reason: String },
}

impl DocumentStatus {
    pub fn is_parsed(&self) -> bool {
        matches!(self, DocumentStatus::Parsed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Character (not byte) offsets into the document's raw text.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub number: u32,
    pub raw_string: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_path: String,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
    pub references: Vec<ReferenceEntry>,
    pub status: DocumentStatus,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Document {
    /// Parses one citing document from its text. Sentences are taken from the
    /// body only (everything before the reference-list heading), so
    /// bibliography lines never show up as citation contexts.
    pub fn from_text(
        id: impl Into<String>,
        source_path: impl Into<String>,
        raw_text: String,
    ) -> Self {
        let id = id.into();
        let source_path = source_path.into();
        if raw_text.trim().is_empty() {
            return Self::failed(id, source_path, "document is empty");
        }
        let parsed = parse_reference_list(&raw_text);
        let body = match parsed.section_start {
            Some(byte) => &raw_text[..byte],
            None => raw_text.as_str(),
        };
        let sentences = segment_sentences(body);
        let status = if parsed.entries.is_empty() {
            DocumentStatus::ParseFailed {
                reason: "no numbered reference list found".into(),
            }
        } else if sentences.is_empty() {
            DocumentStatus::ParseFailed {
                reason: "document body is empty".into(),
            }
        } else {
            DocumentStatus::Parsed
        };
        Self {
            id,
            source_path,
            raw_text,
            sentences,
            references: parsed.entries,
            status,
            warnings: parsed.warnings,
        }
    }

    pub fn failed(
        id: impl Into<String>,
        source_path: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            source_path: source_path.into(),
            raw_text: String::new(),
            sentences: Vec::new(),
            references: Vec::new(),
            status: DocumentStatus::ParseFailed {
                reason: reason.into(),
            },
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub target: TargetPaper,
    pub documents: Vec<Document>,
    pub warnings: Vec<String>,
}

impl Corpus {
    pub fn documents_total(&self) -> usize {
        self.documents.len()
    }

    pub fn documents_parsed(&self) -> usize {
        self.documents
            .iter()
            .filter(|d| d.status.is_parsed())
            .count()
    }

    /// Fraction of documents that parsed; 0 for an empty corpus.
    pub fn success_rate(&self) -> f64 {
        success_rate(self.documents_parsed(), self.documents_total())
    }
}

pub fn success_rate(parsed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        parsed as f64 / total as f64
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    target: ManifestTarget,
    #[serde(default)]
    documents: Vec<ManifestDocument>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTarget {
    id: String,
    title: String,
    full_text_path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDocument {
    id: String,
    path: String,
}

/// Reads the manifest and every document it lists. Unreadable or unparsable
/// documents are kept with a `ParseFailed` status; only manifest problems are
/// fatal. Output order follows manifest order.
pub fn ingest_corpus(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| CorpusError::ManifestIo {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let schema_err = |message: String| CorpusError::ManifestSchema {
        path: manifest_path.to_path_buf(),
        message,
    };
    let manifest: ManifestFile = toml::from_str(&text).map_err(|e| schema_err(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut warnings = Vec::new();
    let full_text = match &manifest.target.full_text_path {
        Some(p) => match fs::read_to_string(base.join(p)) {
            Ok(t) => Some(t),
            Err(e) => {
                let msg = format!("target full text {p} unreadable: {e}");
                log::warn!("{msg}");
                warnings.push(msg);
                None
            }
        },
        None => None,
    };
    let target = TargetPaper::new(manifest.target.id.trim(), &manifest.target.title, full_text)
        .ok_or_else(|| schema_err("target.title is empty".into()))?;

    let mut seen = HashSet::new();
    for d in &manifest.documents {
        if d.id.trim().is_empty() {
            return Err(schema_err("document with empty id".into()));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(schema_err(format!("duplicate document id {:?}", d.id)));
        }
    }
    if manifest.documents.is_empty() {
        let msg = "manifest lists no documents".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let documents = manifest
        .documents
        .par_iter()
        .map(|entry| load_document(base, entry))
        .collect();

    Ok(Corpus {
        target,
        documents,
        warnings,
    })
}

fn load_document(base: &Path, entry: &ManifestDocument) -> Document {
    let path = base.join(&entry.path);
    match fs::read(&path) {
        Err(e) => Document::failed(&entry.id, &entry.path, format!("unreadable file: {e}")),
        Ok(bytes) => match String::from_utf8(bytes) {
            Err(_) => Document::failed(&entry.id, &entry.path, "not valid UTF-8 text"),
            Ok(text) => Document::from_text(&entry.id, &entry.path, text),
        },
    }
}

const ABBREVIATIONS: &[&str] = &[
    "al.", "e.g.", "i.e.", "fig.", "figs.", "vs.", "cf.", "eq.", "eqs.", "sec.", "ref.", "refs.",
    "no.", "vol.", "pp.", "approx.", "resp.", "dr.", "mr.", "ms.", "prof.", "tab.", "ch.",
];

/// Splits text into sentences. A boundary is a run of `.`, `!` or `?`
/// (optionally followed by closing quotes or parentheses), then whitespace,
/// then an uppercase letter, a digit or `[`. Periods ending a known
/// abbreviation or a single-letter initial never split. A blank line also
/// ends a sentence.
pub fn segment_sentences(raw_text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = raw_text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;

    while i < n {
        let c = chars[i];
        let Some(s) = start else {
            if !c.is_whitespace() {
                start = Some(i);
            } else {
                i += 1;
            }
            continue;
        };

        if c == '\n' && (is_paragraph_break(&chars, i) || is_heading_line(&chars, s, i)) {
            spans.push((s, trim_end(&chars, s, i)));
            start = None;
            i += 1;
            continue;
        }

        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < n && matches!(chars[end], '.' | '!' | '?') {
                end += 1;
            }
            while end < n && matches!(chars[end], '"' | '\'' | ')' | '\u{201d}' | '\u{2019}') {
                end += 1;
            }
            if end < n && chars[end].is_whitespace() {
                let mut next = end;
                while next < n && chars[next].is_whitespace() {
                    next += 1;
                }
                let opens_sentence = next < n
                    && (chars[next].is_uppercase()
                        || chars[next].is_ascii_digit()
                        || chars[next] == '[');
                let abbreviated = end == i + 1 && c == '.' && is_abbreviation(&chars[s..=i]);
                if opens_sentence && !abbreviated {
                    spans.push((s, end));
                    start = None;
                    i = next;
                    continue;
                }
            }
            i = end;
            continue;
        }
        i += 1;
    }
    if let Some(s) = start {
        spans.push((s, trim_end(&chars, s, n)));
    }

    spans
        .into_iter()
        .enumerate()
        .map(|(index, (a, b))| Sentence {
            index,
            text: chars[a..b].iter().collect(),
            span: (a, b),
        })
        .collect()
}

/// A short line that begins a sentence, carries no terminal punctuation and
/// is followed by a capitalised line reads as a section heading, e.g.
/// `2. Related Work` or `Findings`. Longer lines are treated as wrapped text.
fn is_heading_line(chars: &[char], start: usize, newline: usize) -> bool {
    let line = &chars[start..newline];
    if line.contains(&'\n') || line.contains(&'[') {
        return false;
    }
    let text: String = line.iter().collect();
    let text = text.trim();
    let Some(last) = text.chars().last() else {
        return false;
    };
    if matches!(last, '.' | '!' | '?' | ',' | ';' | ':' | '-') {
        return false;
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let numbered = words.first().is_some_and(|w| {
        let w = w.trim_end_matches('.');
        !w.is_empty()
            && (w.chars().all(|c| c.is_ascii_digit() || c == '.')
                || w.chars().all(|c| "IVXLC".contains(c)))
    });
    let short = words.len() <= 3 || (numbered && words.len() <= 7);
    let next = chars[newline + 1..].iter().find(|c| !c.is_whitespace());
    short && next.is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
}

fn is_paragraph_break(chars: &[char], newline: usize) -> bool {
    let mut j = newline + 1;
    while j < chars.len() && chars[j] != '\n' && chars[j].is_whitespace() {
        j += 1;
    }
    j < chars.len() && chars[j] == '\n'
}

fn trim_end(chars: &[char], start: usize, mut end: usize) -> usize {
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    end
}

fn is_abbreviation(sentence_so_far: &[char]) -> bool {
    let token_start = sentence_so_far
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let token: String = sentence_so_far[token_start..]
        .iter()
        .skip_while(|c| !c.is_alphanumeric())
        .collect();
    let mut letters = token.chars();
    if let (Some(first), Some('.'), None) = (letters.next(), letters.next(), letters.next()) {
        if first.is_alphabetic() {
            return true;
        }
    }
    // A section number such as `2.` or `IV.` opening a line.
    let number = token.trim_end_matches('.');
    if token_start == 0
        && !number.is_empty()
        && (number.chars().all(|c| c.is_ascii_digit() || c == '.')
            || number.chars().all(|c| "IVXLC".contains(c)))
    {
        return true;
    }
    let lower = token.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Returns the `[start, end)` slice of `text` in character offsets.
pub fn slice_chars(text: &str, span: (usize, usize)) -> String {
    text.chars()
        .skip(span.0)
        .take(span.1.saturating_sub(span.0))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedReferences {
    pub entries: Vec<ReferenceEntry>,
    pub warnings: Vec<String>,
    /// Byte offset of the heading line that opens the reference section.
    pub section_start: Option<usize>,
}

static HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^[ \t]*(?:[0-9]+\.?|[ivxlcdm]+\.)?[ \t]*(?:references|bibliography)[ \t]*:?[ \t]*\r?$")
        .unwrap()
});
static BRACKET_ENTRY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\[(\d+)\]\s*(.*)$").unwrap());
static DOTTED_ENTRY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\.\s+(.*)$").unwrap());

#[derive(Clone, Copy, PartialEq)]
enum EntryStyle {
    Bracket,
    Dotted,
}

/// Parses the numbered reference list under the last "References" or
/// "Bibliography" heading. Entries start at line-initial `[n]` or `n.`;
/// the style of the first entry fixes the style for the section. Dotted
/// entries must number consecutively, so years such as `2019.` at the start
/// of a wrapped line are read as continuation text. Duplicate numbers keep
/// the first entry and record a warning.
pub fn parse_reference_list(raw_text: &str) -> ParsedReferences {
    let Some(heading) = HEADING.find_iter(raw_text).last() else {
        return ParsedReferences::default();
    };
    let mut out = ParsedReferences {
        section_start: Some(heading.start()),
        ..Default::default()
    };
    let section = &raw_text[heading.end()..];

    let mut style: Option<EntryStyle> = None;
    let mut current: Option<(u32, String)> = None;
    let mut skipping = false;
    let mut seen = BTreeSet::new();
    let mut last_number = 0u32;

    let finish = |entry: Option<(u32, String)>, out: &mut ParsedReferences| {
        if let Some((number, text)) = entry {
            let raw_string = collapse_whitespace(&text);
            if raw_string.is_empty() {
                out.warnings
                    .push(format!("reference [{number}] has no text; skipped"));
            } else {
                out.entries.push(ReferenceEntry { number, raw_string });
            }
        }
    };

    for line in section.lines() {
        let bracket = BRACKET_ENTRY.captures(line);
        let dotted = DOTTED_ENTRY.captures(line);
        let start = match style {
            None => bracket
                .map(|c| (EntryStyle::Bracket, c))
                .or_else(|| dotted.map(|c| (EntryStyle::Dotted, c))),
            Some(EntryStyle::Bracket) => bracket.map(|c| (EntryStyle::Bracket, c)),
            Some(EntryStyle::Dotted) => dotted
                .filter(|c| c[1].parse::<u32>().is_ok_and(|n| n == last_number + 1))
                .map(|c| (EntryStyle::Dotted, c)),
        };
        match start {
            Some((entry_style, caps)) => {
                let Ok(number) = caps[1].parse::<u32>() else {
                    out.warnings
                        .push(format!("reference number out of range: {}", &caps[1]));
                    continue;
                };
                style = Some(entry_style);
                finish(current.take(), &mut out);
                if number == 0 {
                    out.warnings.push("reference numbered 0 skipped".into());
                    skipping = true;
                } else if !seen.insert(number) {
                    out.warnings.push(format!(
                        "duplicate reference number [{number}]; keeping the first entry"
                    ));
                    skipping = true;
                } else {
                    skipping = false;
                    last_number = number;
                    current = Some((number, caps[2].to_string()));
                }
            }
            None => {
                if let (Some((_, text)), false) = (current.as_mut(), skipping) {
                    text.push(' ');
                    text.push_str(line.trim());
                }
            }
        }
    }
    finish(current.take(), &mut out);
    out
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_terminal_periods_make_two_sentences() {
        let s = segment_sentences("A works [1]. B fails [2].");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].text, "A works [1].");
        assert_eq!(s[1].text, "B fails [2].");
        assert_eq!(s[1].span, (13, 25));
    }

    #[test]
    fn et_al_does_not_split() {
        let s = segment_sentences("See Smith et al. [3] for details.");
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn other_abbreviations_and_initials() {
        let s = segment_sentences(
            "As in Fig. 3 the tool (e.g. Racer) wins. J. Smith disagrees vs. Jones.",
        );
        assert_eq!(s.len(), 2, "{s:?}");
        assert_eq!(s[1].text, "J. Smith disagrees vs. Jones.");
    }

    #[test]
    fn empty_input() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("   \n ").is_empty());
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        let s =
            segment_sentences("Version 2.0 is faster. it is also smaller! Next one? [4] cites it.");
        assert_eq!(s.len(), 3, "{s:?}");
        assert_eq!(s[2].text, "[4] cites it.");
    }

    #[test]
    fn headings_split_but_wrapped_lines_do_not() {
        let raw = "II. DISCUSSION\nThe limitation of [21] is\nthat it needs logs.\nOpen problems\nLogs [3] are sparse.";
        let s = segment_sentences(raw);
        let texts: Vec<&str> = s.iter().map(|x| x.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "II. DISCUSSION",
                "The limitation of [21] is\nthat it needs logs.",
                "Open problems",
                "Logs [3] are sparse."
            ]
        );
        let wrapped = segment_sentences(
            "Concurrency bugs are notoriously hard to\nReproduce in production [1].",
        );
        assert_eq!(wrapped.len(), 1);
    }

    #[test]
    fn spans_are_char_offsets() {
        let raw = "Ünïcode wörks [1]. Ánd so does this.";
        for s in segment_sentences(raw) {
            assert_eq!(slice_chars(raw, s.span), s.text);
        }
    }

    #[test]
    fn paragraph_break_ends_sentence() {
        let s = segment_sentences("1 Introduction\n\nRaces are hard [2].");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].text, "1 Introduction");
    }

    #[test]
    fn bracket_reference_entry() {
        let raw = "Body text [55].\n\nReferences\n[54] Someone. Other work.\n[55] Yu et al. RRF: a tool for reproducing\n    process races. 2016.\n";
        let refs = parse_reference_list(raw);
        assert!(refs.entries.contains(&ReferenceEntry {
            number: 55,
            raw_string: "Yu et al. RRF: a tool for reproducing process races. 2016.".into(),
        }));
        assert_eq!(refs.section_start, Some(raw.find("References").unwrap()));
    }

    #[test]
    fn no_heading_no_entries() {
        let refs = parse_reference_list("[1] Looks like a reference but no heading.");
        assert!(refs.entries.is_empty());
        assert_eq!(refs.section_start, None);
    }

    #[test]
    fn duplicate_numbers_keep_first() {
        let refs = parse_reference_list("REFERENCES\n[1] First.\n[1] Second.\n[2] Third.");
        assert_eq!(refs.entries.len(), 2);
        assert_eq!(refs.entries[0].raw_string, "First.");
        assert_eq!(refs.warnings.len(), 1);
    }

    #[test]
    fn dotted_style_ignores_year_lines() {
        let raw =
            "Bibliography\n1. A. Author. Some title.\n2019. In Proc. of X.\n2. B. Author. Other.\n";
        let refs = parse_reference_list(raw);
        assert_eq!(refs.entries.len(), 2);
        assert_eq!(
            refs.entries[0].raw_string,
            "A. Author. Some title. 2019. In Proc. of X."
        );
    }

    #[test]
    fn last_heading_wins() {
        let raw = "References\n[1] Early.\nMore body.\nVII. REFERENCES\n[1] Late.";
        let refs = parse_reference_list(raw);
        assert_eq!(
            refs.entries,
            vec![ReferenceEntry {
                number: 1,
                raw_string: "Late.".into()
            }]
        );
    }

    #[test]
    fn document_without_references_fails() {
        let d = Document::from_text("d", "d.txt", "Just prose here.".into());
        assert!(!d.status.is_parsed());
        let d = Document::from_text("d", "d.txt", "Prose [1].\nReferences\n[1] X.".into());
        assert!(d.status.is_parsed());
        assert_eq!(d.sentences.len(), 1);
    }

    #[test]
    fn target_title_must_be_non_blank() {
        assert!(TargetPaper::new("t", "  \n ", None).is_none());
        assert_eq!(TargetPaper::new("t", " A   B ", None).unwrap().title, "A B");
    }

    proptest! {
        #[test]
        fn segmentation_covers_all_non_whitespace(raw in "[A-Za-z0-9 .!?\\[\\],\n]{0,120}") {
            let sentences = segment_sentences(&raw);
            let joined: String = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&raw));
            let mut prev_end = 0;
            for s in &sentences {
                prop_assert!(s.span.0 >= prev_end && s.span.0 < s.span.1);
                prop_assert_eq!(slice_chars(&raw, s.span), s.text.clone());
                prev_end = s.span.1;
            }
            prop_assert_eq!(segment_sentences(&raw), sentences);
        }

        #[test]
        fn reference_numbers_unique(lines in proptest::collection::vec((1u32..6, "[a-z ]{1,10}"), 0..12)) {
            let mut raw = String::from("References\n");
            for (n, t) in &lines {
                raw.push_str(&format!("[{n}] {t}x\n"));
            }
            let refs = parse_reference_list(&raw);
            let nums: BTreeSet<u32> = refs.entries.iter().map(|e| e.number).collect();
            prop_assert_eq!(nums.len(), refs.entries.len());
        }
    }
}
