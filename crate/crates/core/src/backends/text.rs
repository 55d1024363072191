//! Word-level tokenization shared by the span extractor and the mocks.
//!
//! Words are runs of alphanumerics (with inner apostrophes, so `Lilli's` is
//! one token); every other non-space character is a token of its own. Each
//! token carries its byte range in the source so spans can be sliced back out
//! verbatim.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

static WORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+(?:['’][\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

impl Token<'_> {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn is_word(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_alphanumeric)
    }
}

pub fn word_tokens(text: &str) -> Vec<Token<'_>> {
    WORD_RE.find_iter(text).map(|m| Token { text: m.as_str(), start: m.start(), end: m.end() }).collect()
}

/// Verbatim slice of `text` covering tokens `start..=end`.
pub fn token_span(text: &str, start: usize, end: usize) -> Option<&str> {
    let tokens = word_tokens(text);
    let first = tokens.get(start)?;
    let last = tokens.get(end)?;
    if start > end {
        return None;
    }
    Some(&text[first.start..last.end])
}

/// Lowercased word tokens, punctuation dropped.
pub fn lower_words(text: &str) -> Vec<String> {
    word_tokens(text).into_iter().filter(Token::is_word).map(|t| t.text.to_lowercase()).collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "by", "to", "for", "from", "with", "and", "or", "is", "was", "are",
    "were", "be", "been", "did", "does", "do", "what", "who", "whom", "whose", "which", "when", "where", "why", "how",
    "many", "much", "it", "its", "as", "that", "this",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Lowercased non-stopword word tokens as a set.
pub fn content_words(text: &str) -> HashSet<String> {
    lower_words(text).into_iter().filter(|w| !is_stopword(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_keeps_apostrophes() {
        let toks: Vec<_> = word_tokens("Lilli's Marriage, (1919).").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, ["Lilli's", "Marriage", ",", "(", "1919", ")", "."]);
    }

    #[test]
    fn token_span_slices_verbatim() {
        let s = "Q: Where is it?  A: Paris,  France";
        assert_eq!(token_span(s, 8, 10), Some("Paris,  France"));
        assert_eq!(token_span(s, 9, 7), None);
        assert_eq!(token_span(s, 0, 99), None);
    }

    #[test]
    fn offsets_are_byte_offsets() {
        let s = "Zürich ist schön";
        for t in word_tokens(s) {
            assert_eq!(&s[t.range()], t.text);
        }
    }
}
