//! Statement cleaning ahead of embedding and clustering: lowercase, fold to
//! ASCII, delete everything that is not a letter or whitespace (digits,
//! brackets and punctuation included), then drop stopwords.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Set of lowercase words removed during cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList(HashSet<String>);

impl StopwordList {
    /// Parses the line format: one word per line, `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self(parse_word_list(text).collect())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn empty() -> Self {
        Self(HashSet::new())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for StopwordList {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl FromIterator<String> for StopwordList {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self(iter.into_iter().map(|w| w.to_lowercase()).collect())
    }
}

pub(crate) fn parse_word_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedStatement {
    /// `(doc_id, sentence_index)` of the originating citation context.
    pub context_ref: (String, usize),
    pub original_text: String,
    pub tokens: Vec<String>,
    pub cleaned_text: String,
}

impl CleanedStatement {
    pub fn new(
        doc_id: impl Into<String>,
        sentence_index: usize,
        original_text: impl Into<String>,
        stopwords: &StopwordList,
    ) -> Self {
        let original_text = original_text.into();
        let tokens = clean_text(&original_text, stopwords);
        let cleaned_text = tokens.join(" ");
        Self {
            context_ref: (doc_id.into(), sentence_index),
            original_text,
            tokens,
            cleaned_text,
        }
    }
}

/// Returns the cleaned tokens of `text`, in order.
pub fn clean_text(text: &str, stopwords: &StopwordList) -> Vec<String> {
    // Fold each whitespace token on its own: transliteration may insert
    // spaces, which must not split one input word into several.
    text.split_whitespace()
        .map(|word| {
            deunicode::deunicode(word)
                .chars()
                .filter(char::is_ascii_alphabetic)
                .map(|c| c.to_ascii_lowercase())
                .collect::<String>()
        })
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .collect()
}

/// Drops statements whose `cleaned_text` repeats an earlier one. Returns the
/// survivors in input order and the number removed.
pub fn dedup_statements(statements: Vec<CleanedStatement>) -> (Vec<CleanedStatement>, usize) {
    let before = statements.len();
    let mut seen = HashSet::new();
    let kept: Vec<_> = statements
        .into_iter()
        .filter(|s| seen.insert(s.cleaned_text.clone()))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tokens(text: &str) -> Vec<String> {
        clean_text(text, &StopwordList::default())
    }

    #[test]
    fn bundled_list_is_loaded() {
        let sw = StopwordList::default();
        assert!(sw.len() > 140);
        for w in ["the", "and", "is"] {
            assert!(sw.contains(w));
        }
    }

    #[test]
    fn removes_stopwords_digits_and_brackets() {
        assert_eq!(
            tokens("The tool is effective and fast [12]."),
            ["tool", "effective", "fast"]
        );
    }

    #[test]
    fn empty_and_non_alphabetic_inputs() {
        assert!(tokens("").is_empty());
        assert!(tokens("123 [45] --").is_empty());
    }

    #[test]
    fn folds_accents_and_joins_hyphenated_words() {
        assert_eq!(
            tokens("Naïve state-of-the-art RacePro"),
            ["naive", "stateoftheart", "racepro"]
        );
    }

    #[test]
    fn custom_list_format() {
        let sw = StopwordList::parse("# comment\nTool\n\n  fast  # trailing\n");
        assert_eq!(sw.len(), 2);
        assert_eq!(clean_text("The tool is fast", &sw), ["the", "is"]);
    }

    #[test]
    fn dedup_keeps_first() {
        let sw = StopwordList::default();
        let a = CleanedStatement::new("d1", 0, "The tool is effective and fast [12].", &sw);
        let b = CleanedStatement::new("d2", 4, "Tool effective, fast [3, 7]!", &sw);
        let c = CleanedStatement::new("d2", 5, "Slow tool.", &sw);
        let (kept, removed) = dedup_statements(vec![a.clone(), b, c.clone()]);
        assert_eq!(removed, 1);
        assert_eq!(kept, vec![a, c]);
    }

    #[test]
    fn dedup_identity_when_unique() {
        let sw = StopwordList::default();
        let v = vec![
            CleanedStatement::new("d", 0, "alpha", &sw),
            CleanedStatement::new("d", 1, "beta", &sw),
        ];
        let (kept, removed) = dedup_statements(v.clone());
        assert_eq!((kept, removed), (v, 0));
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent_and_shrinks(text in "\\PC{0,80}") {
            let sw = StopwordList::default();
            let once = clean_text(&text, &sw);
            let twice = clean_text(&once.join(" "), &sw);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.len() <= text.split_whitespace().count());
            for t in &once {
                prop_assert!(!t.is_empty() && t.bytes().all(|b| b.is_ascii_lowercase()));
                prop_assert!(!sw.contains(t));
            }
        }
    }
}
