//! Word-level normalization shared by coverage scoring and CIDEr.

use std::collections::BTreeSet;

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes every non-alphanumeric character from `word`.
pub fn strip_punct(word: &str) -> String {
    word.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Lowercased, punctuation-stripped words in order; empty words dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| strip_punct(&w.to_lowercase()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Unique lowercased words of `text`.
pub fn word_set(text: &str) -> BTreeSet<String> {
    words(text).into_iter().collect()
}
