//! Rule-based entity annotator.
//!
//! Capitalized word runs become `PERSON` (two or more words) or `PROPN`
//! (single words that are not sentence-initial); standalone four-digit numbers
//! become `DATE`. Sentence-initial determiners and pronouns are dropped from
//! the front of a run. Crude, but it recovers the names a reader prompt most
//! needs, and any [`EntityAnnotator`] can replace it.

use super::text::{word_tokens, Token};
use super::{BackendError, EntityAnnotator, EntityMention};

const LEADING_FUNCTION_WORDS: &[&str] = &[
    "The", "A", "An", "It", "He", "She", "They", "His", "Her", "Its", "Their", "This", "That", "These", "Those", "In",
    "On", "At", "After", "Before", "When", "While", "During",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleAnnotator;

impl RuleAnnotator {
    pub fn new() -> Self {
        Self
    }

    pub fn mentions(&self, passage: &str) -> Vec<EntityMention> {
        let tokens = word_tokens(passage);
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let tok = tokens[i];
            if is_year(tok.text) {
                mentions.push(mention(passage, tok.start, tok.end, "DATE"));
                i += 1;
                continue;
            }
            if !is_capitalized(&tok) {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < tokens.len()
                && is_capitalized(&tokens[j])
                && only_spaces_between(passage, &tokens[j - 1], &tokens[j])
            {
                j += 1;
            }
            let run = &tokens[i..j];
            i = j;

            let sentence_initial = is_sentence_initial(passage, run[0].start);
            let skip = run.iter().take_while(|t| LEADING_FUNCTION_WORDS.contains(&t.text)).count().min(run.len());
            let kept = &run[skip..];
            match kept.len() {
                0 => {}
                1 if sentence_initial && skip == 0 => {}
                1 => mentions.push(mention(passage, kept[0].start, kept[0].end, "PROPN")),
                _ => mentions.push(mention(passage, kept[0].start, kept[kept.len() - 1].end, "PERSON")),
            }
        }
        mentions.sort_by_key(|m| (m.char_start, m.char_end));
        mentions
    }
}

impl EntityAnnotator for RuleAnnotator {
    fn annotate(&self, passage_text: &str) -> Result<Vec<EntityMention>, BackendError> {
        Ok(self.mentions(passage_text))
    }
}

fn mention(passage: &str, start: usize, end: usize, label: &str) -> EntityMention {
    EntityMention {
        surface: passage[start..end].to_string(),
        label: label.to_string(),
        char_start: start,
        char_end: end,
    }
}

fn is_year(word: &str) -> bool {
    word.len() == 4 && word.bytes().all(|b| b.is_ascii_digit())
}

fn is_capitalized(tok: &Token<'_>) -> bool {
    tok.text.chars().next().is_some_and(char::is_uppercase)
}

fn only_spaces_between(text: &str, a: &Token<'_>, b: &Token<'_>) -> bool {
    let gap = &text[a.end..b.start];
    !gap.is_empty() && gap.chars().all(|c| c == ' ')
}

fn is_sentence_initial(text: &str, start: usize) -> bool {
    match text[..start].trim_end().chars().last() {
        None => true,
        Some(c) => matches!(c, '.' | '!' | '?' | '\n'),
    }
}
