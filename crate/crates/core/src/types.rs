//! Shared value types: tokens, words, T/C labels, labeled sequences,
//! next-token distributions and per-position probe records.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance on total probability mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A token of some backend vocabulary. `text` is the exact surface form,
/// including any leading whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenRef {
    pub id: u32,
    pub text: String,
}

impl TokenRef {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        Self {
            id,
            text: text.into(),
        }
    }
}

/// A word made of one or more consecutive tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub text: String,
    pub tokens: Vec<TokenRef>,
    /// Index of the first token of this word in the token sequence.
    pub start_index: usize,
}

impl WordSpan {
    pub fn single(token: TokenRef, start_index: usize) -> Self {
        Self {
            text: token.text.clone(),
            tokens: vec![token],
            start_index,
        }
    }

    pub fn token_ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

/// Template/content level of a word. Level 1 is the top-level template;
/// in the binary case (`n_levels == 2`) level 2 is content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TcLabel(pub u8);

impl TcLabel {
    pub const TEMPLATE: TcLabel = TcLabel(1);
    pub const CONTENT: TcLabel = TcLabel(2);

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn is_template(self) -> bool {
        self.0 == 1
    }

    /// Collapses a hierarchical label to the binary T/C view.
    pub fn binary(self) -> TcLabel {
        if self.is_template() {
            TcLabel::TEMPLATE
        } else {
            TcLabel::CONTENT
        }
    }
}

impl fmt::Display for TcLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            1 => write!(f, "T"),
            n => write!(f, "C{n}"),
        }
    }
}

/// A word sequence (prompt, then question, then answer) with per-word labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub words: Vec<WordSpan>,
    pub labels: Vec<TcLabel>,
    pub prompt_len: usize,
    pub question_len: usize,
    pub n_levels: u8,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of the first answer word.
    pub fn answer_start(&self) -> usize {
        self.prompt_len + self.question_len
    }

    pub fn word_texts(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    pub fn prompt_text(&self) -> String {
        self.words[..self.prompt_len]
            .iter()
            .map(|w| w.text.as_str())
            .collect()
    }

    pub fn question_text(&self) -> String {
        self.words[self.prompt_len..self.answer_start()]
            .iter()
            .map(|w| w.text.as_str())
            .collect()
    }

    pub fn answer_text(&self) -> String {
        self.words[self.answer_start()..]
            .iter()
            .map(|w| w.text.as_str())
            .collect()
    }

    /// All tokens of the sequence, in order.
    pub fn tokens(&self) -> Vec<TokenRef> {
        self.words
            .iter()
            .flat_map(|w| w.tokens.iter().cloned())
            .collect()
    }
}

/// One invariant violation found by [`validate_labeled_sequence`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: Option<usize>,
    pub message: String,
}

impl Violation {
    fn at(index: usize, message: impl Into<String>) -> Self {
        Self {
            index: Some(index),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            index: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "word {i}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Checks every structural invariant of a labeled sequence. An empty report
/// means the sequence is well formed.
pub fn validate_labeled_sequence(seq: &LabeledSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    if seq.words.is_empty() {
        out.push(Violation::global("empty sequence"));
        return out;
    }
    if seq.n_levels < 2 {
        out.push(Violation::global("n_levels must be at least 2"));
    }
    if seq.labels.len() != seq.words.len() {
        out.push(Violation::global(format!(
            "{} labels for {} words",
            seq.labels.len(),
            seq.words.len()
        )));
    }
    if seq.prompt_len + seq.question_len > seq.words.len() {
        out.push(Violation::global(
            "prompt and question exceed sequence length",
        ));
    }

    let mut next_start = seq.words[0].start_index;
    for (i, word) in seq.words.iter().enumerate() {
        if word.tokens.is_empty() {
            out.push(Violation::at(i, "word has no tokens"));
        } else {
            let joined: String = word.tokens.iter().map(|t| t.text.as_str()).collect();
            if joined != word.text {
                out.push(Violation::at(
                    i,
                    "token texts do not concatenate to word text",
                ));
            }
            if word.tokens.iter().any(|t| t.text.is_empty()) {
                out.push(Violation::at(i, "empty token text"));
            }
        }
        if word.start_index != next_start {
            out.push(Violation::at(i, "words are not contiguous"));
        }
        next_start = word.start_index + word.tokens.len();
    }

    for (i, label) in seq.labels.iter().enumerate() {
        if label.0 < 1 || label.0 > seq.n_levels {
            out.push(Violation::at(
                i,
                format!("label level {} outside 1..={}", label.0, seq.n_levels),
            ));
            continue;
        }
        if i < seq.prompt_len && !label.is_template() {
            out.push(Violation::at(i, "prompt must be template"));
        } else if i >= seq.prompt_len && i < seq.answer_start() && label.is_template() {
            out.push(Violation::at(i, "question must be content"));
        }
    }
    out
}

/// One support entry of a [`Distribution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub id: u32,
    pub text: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("negative probability {p} for token {id}")]
    Negative { id: u32, p: f64 },
    #[error("total mass {0} is not 1")]
    Mass(f64),
    #[error("duplicate token id {0} in support")]
    Duplicate(u32),
}

/// A next-token distribution over an explicit support plus one bucket
/// holding the mass of every token outside the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub support: Vec<TokenProb>,
    pub other_mass: f64,
}

impl Distribution {
    pub fn new(support: Vec<TokenProb>, other_mass: f64) -> Result<Self, DistributionError> {
        let d = Self {
            support,
            other_mass,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn one_hot(token: TokenRef) -> Self {
        Self {
            support: vec![TokenProb {
                id: token.id,
                text: token.text,
                p: 1.0,
            }],
            other_mass: 0.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.support.iter().map(|e| e.p).sum::<f64>() + self.other_mass
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        let mut seen = HashSet::with_capacity(self.support.len());
        for e in &self.support {
            if e.p.is_nan() || e.p < 0.0 {
                return Err(DistributionError::Negative { id: e.id, p: e.p });
            }
            if !seen.insert(e.id) {
                return Err(DistributionError::Duplicate(e.id));
            }
        }
        if self.other_mass.is_nan() || self.other_mass < 0.0 {
            return Err(DistributionError::Mass(self.other_mass));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::Mass(total));
        }
        Ok(())
    }

    /// Most probable support token; ties go to the lower id.
    pub fn argmax(&self) -> Option<TokenRef> {
        self.support
            .iter()
            .max_by(|a, b| a.p.total_cmp(&b.p).then(b.id.cmp(&a.id)))
            .map(|e| TokenRef::new(e.id, e.text.clone()))
    }

    pub fn prob_of(&self, id: u32) -> f64 {
        self.support
            .iter()
            .find(|e| e.id == id)
            .map_or(0.0, |e| e.p)
    }

    /// Sorts by descending probability (ties by id) and keeps at most `k`
    /// entries, moving the dropped mass into `other_mass`.
    pub fn truncate_top_k(mut self, k: usize) -> Self {
        self.sort_desc();
        if self.support.len() > k {
            let dropped: f64 = self.support[k..].iter().map(|e| e.p).sum();
            self.support.truncate(k);
            self.other_mass += dropped;
        }
        self
    }

    pub fn sort_desc(&mut self) {
        self.support
            .sort_by(|a, b| b.p.total_cmp(&a.p).then(a.id.cmp(&b.id)));
    }
}

/// Per-position variance measurement over N content-replaced inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// Word index within the sequence.
    pub position: usize,
    pub word: String,
    pub distributions: Vec<Distribution>,
    pub variance_raw: f64,
    pub variance_norm: f64,
    pub truth_label: Option<TcLabel>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(id: u32, text: &str, start: usize) -> WordSpan {
        WordSpan::single(TokenRef::new(id, text), start)
    }

    fn seq(labels: &[u8], prompt_len: usize, question_len: usize) -> LabeledSequence {
        LabeledSequence {
            words: (0..labels.len())
                .map(|i| word(i as u32, &format!(" w{i}"), i))
                .collect(),
            labels: labels.iter().map(|&l| TcLabel(l)).collect(),
            prompt_len,
            question_len,
            n_levels: 2,
        }
    }

    #[test]
    fn empty_sequence_is_a_violation() {
        let s = LabeledSequence {
            words: vec![],
            labels: vec![],
            prompt_len: 0,
            question_len: 0,
            n_levels: 2,
        };
        let report = validate_labeled_sequence(&s);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].message, "empty sequence");
    }

    #[test]
    fn prompt_word_must_be_template() {
        let s = seq(&[1, 2, 2, 1, 2], 2, 1);
        let report = validate_labeled_sequence(&s);
        assert_eq!(report, vec![Violation::at(1, "prompt must be template")]);
    }

    #[test]
    fn question_word_must_be_content() {
        let s = seq(&[1, 1, 2, 2], 1, 2);
        let report = validate_labeled_sequence(&s);
        assert_eq!(report, vec![Violation::at(1, "question must be content")]);
    }

    #[test]
    fn well_formed_sequence_has_empty_report() {
        let s = seq(&[1, 1, 2, 2, 1, 2, 1], 2, 2);
        assert!(validate_labeled_sequence(&s).is_empty());
    }

    #[test]
    fn detects_broken_spans() {
        let mut s = seq(&[1, 2, 1], 1, 1);
        s.words[2].start_index = 7;
        s.words[1].text = " other".into();
        let report = validate_labeled_sequence(&s);
        assert!(report.iter().any(|v| v.message.contains("contiguous")));
        assert!(report.iter().any(|v| v.message.contains("concatenate")));
    }

    #[test]
    fn label_out_of_range() {
        let s = seq(&[1, 3, 1], 1, 1);
        let report = validate_labeled_sequence(&s);
        assert!(report[0].message.contains("outside"));
    }

    #[test]
    fn tc_label_round_trips_through_json() {
        for level in 1..=6u8 {
            let l = TcLabel(level);
            let s = serde_json::to_string(&l).unwrap();
            assert_eq!(s, level.to_string());
            assert_eq!(serde_json::from_str::<TcLabel>(&s).unwrap(), l);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(
            vec![TokenProb {
                id: 1,
                text: "a".into(),
                p: 0.5
            }],
            0.5
        )
        .is_ok());
        assert!(matches!(
            Distribution::new(
                vec![TokenProb {
                    id: 1,
                    text: "a".into(),
                    p: 0.6
                }],
                0.5
            ),
            Err(DistributionError::Mass(_))
        ));
        assert!(matches!(
            Distribution::new(
                vec![
                    TokenProb {
                        id: 1,
                        text: "a".into(),
                        p: 0.5
                    },
                    TokenProb {
                        id: 1,
                        text: "a".into(),
                        p: 0.5
                    }
                ],
                0.0
            ),
            Err(DistributionError::Duplicate(1))
        ));
    }

    #[test]
    fn top_k_moves_mass_to_other() {
        let d = Distribution::new(
            vec![
                TokenProb {
                    id: 3,
                    text: "c".into(),
                    p: 0.2,
                },
                TokenProb {
                    id: 1,
                    text: "a".into(),
                    p: 0.5,
                },
                TokenProb {
                    id: 2,
                    text: "b".into(),
                    p: 0.3,
                },
            ],
            0.0,
        )
        .unwrap()
        .truncate_top_k(2);
        assert_eq!(
            d.support.iter().map(|e| e.id).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!((d.other_mass - 0.2).abs() < 1e-15);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn argmax_breaks_ties_by_lower_id() {
        let d = Distribution::new(
            vec![
                TokenProb {
                    id: 9,
                    text: "x".into(),
                    p: 0.5,
                },
                TokenProb {
                    id: 4,
                    text: "y".into(),
                    p: 0.5,
                },
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(d.argmax().unwrap().id, 4);
    }
}
