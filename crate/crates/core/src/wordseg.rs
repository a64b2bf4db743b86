//! Word-level analyzer: merges subword tokens into words.
//!
//! A token starts a new word when its first character is one of the
//! rule's boundary characters (whitespace or sentence punctuation);
//! otherwise it is glued onto the preceding word.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::types::{TokenRef, WordSpan};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryRule {
    pub boundary_prefixes: BTreeSet<char>,
}

impl Default for BoundaryRule {
    fn default() -> Self {
        Self {
            boundary_prefixes: [' ', '\n', '.', ',', ':', ';'].into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("nothing to segment")]
    Empty,
    #[error("boundary rule has no boundary characters")]
    EmptyRule,
}

impl BoundaryRule {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self, SegmentError> {
        let boundary_prefixes: BTreeSet<char> = chars.into_iter().collect();
        if boundary_prefixes.is_empty() {
            return Err(SegmentError::EmptyRule);
        }
        Ok(Self { boundary_prefixes })
    }

    pub fn with_extra(mut self, c: char) -> Self {
        self.boundary_prefixes.insert(c);
        self
    }

    pub fn is_boundary(&self, c: char) -> bool {
        self.boundary_prefixes.contains(&c)
    }

    /// True when `text` begins with a boundary character.
    pub fn starts_word(&self, text: &str) -> bool {
        text.chars().next().is_some_and(|c| self.is_boundary(c))
    }

    /// True when `text` contains no boundary character at all.
    pub fn is_word_body(&self, text: &str) -> bool {
        !text.is_empty() && !text.chars().any(|c| self.is_boundary(c))
    }
}

/// Groups `tokens` into words under `rule`.
pub fn segment(tokens: &[TokenRef], rule: &BoundaryRule) -> Result<Vec<WordSpan>, SegmentError> {
    if tokens.is_empty() {
        return Err(SegmentError::Empty);
    }
    let mut words: Vec<WordSpan> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        match words.last_mut() {
            Some(word) if !rule.starts_word(&tok.text) => {
                word.text.push_str(&tok.text);
                word.tokens.push(tok.clone());
            }
            _ => words.push(WordSpan::single(tok.clone(), i)),
        }
    }
    Ok(words)
}

/// Whether a content word being decoded is finished once `next` is the
/// upcoming token. The boundary token itself is not part of the word.
pub fn word_complete(emitted: &[TokenRef], next: &TokenRef, rule: &BoundaryRule) -> bool {
    !emitted.is_empty() && rule.starts_word(&next.text)
}

/// Character-level split of raw text into words under `rule`; the
/// concatenation of the pieces is `text`.
pub fn split_words<'a>(text: &'a str, rule: &BoundaryRule) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if i > start && rule.is_boundary(c) {
            out.push(&text[start..i]);
            start = i;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(texts: &[&str]) -> Vec<TokenRef> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TokenRef::new(i as u32, *t))
            .collect()
    }

    fn texts(words: &[WordSpan]) -> Vec<&str> {
        words.iter().map(|w| w.text.as_str()).collect()
    }

    #[test]
    fn merges_subwords() {
        let rule = BoundaryRule::default();
        let words = segment(&toks(&["Hello", " wor", "ld", "."]), &rule).unwrap();
        assert_eq!(texts(&words), vec!["Hello", " world", "."]);
        assert_eq!(words[1].start_index, 1);
        assert_eq!(words[1].token_ids(), vec![1, 2]);
        assert_eq!(words[2].start_index, 3);
    }

    #[test]
    fn space_prefixed_tokens_are_words() {
        let rule = BoundaryRule::default();
        let words = segment(&toks(&[" The", " last", " letter"]), &rule).unwrap();
        assert_eq!(words.len(), 3);
    }

    #[test]
    fn single_token() {
        let words = segment(&toks(&["abc"]), &BoundaryRule::default()).unwrap();
        assert_eq!(texts(&words), vec!["abc"]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(
            segment(&[], &BoundaryRule::default()),
            Err(SegmentError::Empty)
        );
        assert_eq!(BoundaryRule::new([]), Err(SegmentError::EmptyRule));
    }

    #[test]
    fn completion_rule() {
        let rule = BoundaryRule::default();
        let t = |s: &str| TokenRef::new(0, s);
        assert!(word_complete(&[t("ma"), t("chine")], &t(" is"), &rule));
        assert!(!word_complete(&[t("ma")], &t("chine"), &rule));
        assert!(word_complete(&[t("egpl")], &t("."), &rule));
    }

    #[test]
    fn split_words_on_text() {
        let rule = BoundaryRule::default();
        assert_eq!(
            split_words("Let's go.\n1. The egpl.", &rule),
            vec!["Let's", " go", ".", "\n1", ".", " The", " egpl", "."]
        );
        assert_eq!(split_words("  a", &rule), vec![" ", " a"]);
        assert!(split_words("", &rule).is_empty());
    }

    #[test]
    fn dollar_rule_is_configurable() {
        let rule = BoundaryRule::default().with_extra('$');
        assert_eq!(split_words("cost$5", &rule), vec!["cost", "$5"]);
    }

    proptest! {
        #[test]
        fn segment_is_a_partition(parts in proptest::collection::vec("[ a-c.\n]{1,4}", 1..24)) {
            let rule = BoundaryRule::default();
            let tokens = toks(&parts.iter().map(String::as_str).collect::<Vec<_>>());
            let words = segment(&tokens, &rule).unwrap();
            let flat: Vec<TokenRef> = words.iter().flat_map(|w| w.tokens.clone()).collect();
            prop_assert_eq!(&flat, &tokens);
            let joined: String = words.iter().map(|w| w.text.as_str()).collect();
            let original: String = parts.concat();
            prop_assert_eq!(joined, original);
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    prop_assert!(rule.starts_word(&w.tokens[0].text));
                }
                for t in &w.tokens[1..] {
                    prop_assert!(!rule.starts_word(&t.text));
                }
            }
        }

        #[test]
        fn segment_is_idempotent_on_word_tokens(parts in proptest::collection::vec("[ a-c.\n]{1,4}", 1..24)) {
            let rule = BoundaryRule::default();
            let tokens = toks(&parts.iter().map(String::as_str).collect::<Vec<_>>());
            let words = segment(&tokens, &rule).unwrap();
            let retokenized: Vec<TokenRef> = words
                .iter()
                .enumerate()
                .map(|(i, w)| TokenRef::new(i as u32, w.text.clone()))
                .collect();
            let again = segment(&retokenized, &rule).unwrap();
            prop_assert_eq!(again.len(), words.len());
            prop_assert!(again.iter().all(|w| w.tokens.len() == 1));
        }

        #[test]
        fn split_words_agrees_with_char_tokens(text in "[ a-c.,\n]{1,40}") {
            let rule = BoundaryRule::default();
            let chars: Vec<TokenRef> = text
                .chars()
                .enumerate()
                .map(|(i, c)| TokenRef::new(i as u32, c.to_string()))
                .collect();
            let words = segment(&chars, &rule).unwrap();
            let split = split_words(&text, &rule);
            prop_assert_eq!(texts(&words), split);
        }
    }
}
