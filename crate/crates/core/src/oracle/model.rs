use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::grammar::{ElementKind, Occurrence, Region, RoleDomain, TaskGrammar};
use super::vocab::Vocab;
use super::OracleError;
use crate::types::{Distribution, LabeledSequence, TcLabel, TokenProb, TokenRef};
use crate::wordseg::{segment, split_words};

pub const EOS_ID: u32 = 0;
pub const EOS_TEXT: &str = "<|endoftext|>";

/// Domains up to this size get dense vocabulary ids.
const DENSE_DOMAIN_LIMIT: u128 = 20_000;
const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Probability mass moved onto `distractors`.
    pub epsilon: f64,
    pub distractors: Vec<String>,
    /// Words the tokenizer splits into several tokens, e.g.
    /// `" machine" = [" ma", "chine"]`.
    pub splits: BTreeMap<String, Vec<String>>,
}

/// Where a prefix stands relative to the grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleState<'a> {
    pub grammar: &'a TaskGrammar,
    /// Values of the question-bound slots seen so far.
    pub bound_values: BTreeMap<String, String>,
    /// Per element: the slot value read from the prefix, if any.
    pub values: Vec<Option<String>>,
    /// Index of the next (or partially emitted) element.
    pub cursor: usize,
    /// Text of a word whose tokens have only partly been emitted.
    pub partial: Option<String>,
}

#[derive(Debug)]
pub struct Oracle {
    grammar: TaskGrammar,
    config: OracleConfig,
    vocab: Vocab,
    remembered: Vec<LabeledSequence>,
    word_sets: BTreeMap<String, HashSet<String>>,
}

fn off(position: usize, message: impl Into<String>) -> OracleError {
    OracleError::OffTemplate {
        position,
        message: message.into(),
    }
}

impl Oracle {
    pub fn new(grammar: TaskGrammar, config: OracleConfig) -> Result<Self, OracleError> {
        if !(0.0..1.0).contains(&config.epsilon) {
            return Err(OracleError::Mismatch(format!(
                "epsilon {} must be in [0, 1)",
                config.epsilon
            )));
        }
        if config.epsilon > 0.0 && config.distractors.is_empty() {
            return Err(OracleError::Mismatch(
                "epsilon > 0 needs distractors".into(),
            ));
        }
        for (word, pieces) in &config.splits {
            let ok = !pieces.is_empty()
                && pieces.iter().all(|p| !p.is_empty())
                && pieces.concat() == *word
                && pieces[1..].iter().all(|p| !grammar.rule.starts_word(p));
            if !ok {
                return Err(OracleError::Mismatch(format!("bad split for {word:?}")));
            }
        }

        let mut words = BTreeSet::new();
        let mut leads: BTreeSet<(&str, &str)> = BTreeSet::new();
        for el in &grammar.elements {
            match &el.kind {
                ElementKind::Fixed(t) => {
                    words.insert(t.clone());
                }
                ElementKind::Slot { slot, lead } => {
                    leads.insert((grammar.slots[slot].role.as_str(), lead.as_str()));
                }
            }
        }
        for (role, lead) in leads {
            if let Some(values) = grammar.content_roles[role].enumerate(DENSE_DOMAIN_LIMIT) {
                words.extend(values.into_iter().map(|v| format!("{lead}{v}")));
            }
        }
        words.extend(config.distractors.iter().cloned());
        for pieces in config.splits.values() {
            words.extend(pieces.iter().cloned());
        }
        let vocab = Vocab::new(&[EOS_TEXT], words);
        let word_sets = grammar
            .content_roles
            .iter()
            .filter_map(|(role, d)| match d {
                RoleDomain::Words(ws) => Some((role.clone(), ws.iter().cloned().collect())),
                _ => None,
            })
            .collect();
        Ok(Self {
            grammar,
            config,
            vocab,
            remembered: Vec::new(),
            word_sets,
        })
    }

    pub fn from_grammar(grammar: TaskGrammar) -> Self {
        Self::new(grammar, OracleConfig::default()).expect("default config is valid")
    }

    pub fn grammar(&self) -> &TaskGrammar {
        &self.grammar
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn eos(&self) -> TokenRef {
        TokenRef::new(EOS_ID, EOS_TEXT)
    }

    fn pieces<'w>(&'w self, word: &'w str) -> Vec<&'w str> {
        match self.config.splits.get(word) {
            Some(p) => p.iter().map(String::as_str).collect(),
            None => vec![word],
        }
    }

    fn token(&self, text: &str) -> TokenRef {
        TokenRef::new(self.vocab.id_of(text), text)
    }

    /// One token per word, except for words listed in the split table.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenRef>, OracleError> {
        if text.is_empty() {
            return Err(OracleError::EmptyText);
        }
        Ok(split_words(text, &self.grammar.rule)
            .into_iter()
            .flat_map(|w| self.pieces(w))
            .map(|p| self.token(p))
            .collect())
    }

    fn in_domain(&self, j: usize, value: &str) -> bool {
        let slot = self.grammar.elements[j].slot_name().expect("slot element");
        let role = &self.grammar.slots[slot].role;
        match self.word_sets.get(role) {
            Some(set) => set.contains(value),
            None => self.grammar.content_roles[role].contains(value),
        }
    }

    fn match_word(&self, j: usize, word: &str) -> Result<Option<String>, OracleError> {
        match &self.grammar.elements[j].kind {
            ElementKind::Fixed(t) if t == word => Ok(None),
            ElementKind::Fixed(t) => Err(off(j, format!("expected {t:?}, found {word:?}"))),
            ElementKind::Slot { slot, lead } => {
                let value = word
                    .strip_prefix(lead.as_str())
                    .ok_or_else(|| off(j, format!("slot `{slot}` must start with {lead:?}")))?;
                if !self.in_domain(j, value) {
                    return Err(off(j, format!("{value:?} is not a value of slot `{slot}`")));
                }
                Ok(Some(value.to_owned()))
            }
        }
    }

    /// Candidate words for element `j` with their probabilities.
    fn candidates(
        &self,
        j: usize,
        values: &[Option<String>],
    ) -> Result<Vec<(String, f64)>, OracleError> {
        let el = &self.grammar.elements[j];
        let (slot, lead) = match &el.kind {
            ElementKind::Fixed(t) => return Ok(vec![(t.clone(), 1.0)]),
            ElementKind::Slot { slot, lead } => (slot, lead),
        };
        let domain = self.grammar.domain_at(j).expect("slot has a domain");
        let value = match self.grammar.occurrence(j).expect("slot occurrence") {
            Occurrence::Binding => {
                let all = domain.enumerate(ENUMERATION_LIMIT).unwrap_or_default();
                let p = 1.0 / all.len() as f64;
                return Ok(all.into_iter().map(|v| (format!("{lead}{v}"), p)).collect());
            }
            Occurrence::Copy { from } => values[*from].clone().expect("earlier slot has a value"),
            Occurrence::Compute { func, from } => {
                let args: Vec<&str> = from
                    .iter()
                    .map(|&i| values[i].as_deref().expect("earlier slot has a value"))
                    .collect();
                let v = func.apply(&args).ok_or_else(|| OracleError::Compute {
                    slot: slot.clone(),
                    args: args.iter().map(|s| s.to_string()).collect(),
                })?;
                if !self.in_domain(j, &v) {
                    return Err(OracleError::NotInDomain {
                        slot: slot.clone(),
                        value: v,
                    });
                }
                v
            }
        };
        Ok(vec![(format!("{lead}{value}"), 1.0)])
    }

    /// Number of leading pieces of `word` that spell `partial`, if it is a
    /// proper piece prefix.
    fn piece_prefix_len(&self, word: &str, partial: &str) -> Option<usize> {
        let pieces = self.pieces(word);
        let mut acc = String::new();
        for (m, p) in pieces.iter().enumerate().take(pieces.len() - 1) {
            acc.push_str(p);
            if acc == partial {
                return Some(m + 1);
            }
        }
        None
    }

    /// Parses the prefix text against the grammar.
    pub fn state_of_text(&self, text: &str) -> Result<OracleState<'_>, OracleError> {
        let g = &self.grammar;
        let n = g.elements.len();
        let words = split_words(text, &g.rule);
        let mut values: Vec<Option<String>> = vec![None; n];
        let mut partial = None;
        for (j, w) in words.iter().enumerate() {
            if j >= n {
                return Err(off(j, "prefix continues past the end of the answer"));
            }
            if j + 1 == words.len() && !self.config.splits.is_empty() {
                let cands = self.candidates(j, &values)?;
                if cands
                    .iter()
                    .any(|(c, _)| self.piece_prefix_len(c, w).is_some())
                {
                    partial = Some((*w).to_owned());
                    break;
                }
            }
            values[j] = self.match_word(j, w)?;
        }
        let cursor = if partial.is_some() {
            words.len() - 1
        } else {
            words.len()
        };
        let bound_values = (0..cursor)
            .filter(|&j| self.grammar.occurrence(j) == Some(&Occurrence::Binding))
            .map(|j| {
                (
                    g.elements[j].slot_name().unwrap().to_owned(),
                    values[j].clone().unwrap(),
                )
            })
            .collect();
        Ok(OracleState {
            grammar: g,
            bound_values,
            values,
            cursor,
            partial,
        })
    }

    pub fn state(&self, prefix: &[TokenRef]) -> Result<OracleState<'_>, OracleError> {
        if prefix.is_empty() {
            return Err(OracleError::EmptyPrefix);
        }
        if let Some(i) = prefix.iter().position(|t| t.text == EOS_TEXT) {
            return Err(off(i, "prefix continues past the end of text"));
        }
        let text: String = prefix.iter().map(|t| t.text.as_str()).collect();
        self.state_of_text(&text)
    }

    /// Next-token distribution after `prefix`.
    pub fn next(&self, prefix: &[TokenRef]) -> Result<Distribution, OracleError> {
        let state = self.state(prefix)?;
        let mut mass: BTreeMap<String, f64> = BTreeMap::new();
        if state.cursor == self.grammar.elements.len() {
            mass.insert(EOS_TEXT.to_owned(), 1.0);
        } else {
            let cands = self.candidates(state.cursor, &state.values)?;
            match &state.partial {
                Some(w) => {
                    let hits: Vec<(String, f64)> = cands
                        .into_iter()
                        .filter_map(|(c, p)| {
                            let m = self.piece_prefix_len(&c, w)?;
                            Some((self.pieces(&c)[m].to_owned(), p))
                        })
                        .collect();
                    let total: f64 = hits.iter().map(|(_, p)| p).sum();
                    for (piece, p) in hits {
                        *mass.entry(piece).or_default() += p / total;
                    }
                }
                None => {
                    for (c, p) in cands {
                        *mass.entry(self.pieces(&c)[0].to_owned()).or_default() += p;
                    }
                }
            }
        }
        let eps = self.config.epsilon;
        if eps > 0.0 {
            for p in mass.values_mut() {
                *p *= 1.0 - eps;
            }
            let share = eps / self.config.distractors.len() as f64;
            for d in &self.config.distractors {
                *mass.entry(d.clone()).or_default() += share;
            }
        }
        let mut dist = Distribution {
            support: mass
                .into_iter()
                .map(|(text, p)| TokenProb {
                    id: self.vocab.id_of(&text),
                    text,
                    p,
                })
                .collect(),
            other_mass: 0.0,
        };
        dist.sort_desc();
        Ok(dist)
    }

    /// Values of the free slots as read from a sequence's prompt and question.
    pub fn bindings_of(&self, words: &[&str]) -> Result<BTreeMap<String, String>, OracleError> {
        let g = &self.grammar;
        let head = g.region_len(Region::Prompt) + g.region_len(Region::Question);
        if words.len() < head {
            return Err(OracleError::Mismatch(format!(
                "expected at least {head} words, found {}",
                words.len()
            )));
        }
        let mut out = BTreeMap::new();
        for (j, w) in words[..head].iter().enumerate() {
            if let Some(v) = self.match_word(j, w)? {
                if g.occurrence(j) == Some(&Occurrence::Binding) {
                    out.insert(g.elements[j].slot_name().unwrap().to_owned(), v);
                }
            }
        }
        Ok(out)
    }

    /// Attaches grammar labels to a word sequence of full length.
    pub fn label_words(&self, words: &[&str]) -> Result<LabeledSequence, OracleError> {
        let g = &self.grammar;
        if words.len() != g.elements.len() {
            return Err(OracleError::Mismatch(format!(
                "expected {} words, found {}",
                g.elements.len(),
                words.len()
            )));
        }
        let text: String = words.concat();
        let tokens = self.tokenize(&text)?;
        let spans = segment(&tokens, &g.rule).map_err(|e| OracleError::Mismatch(e.to_string()))?;
        if spans.len() != words.len() || spans.iter().zip(words).any(|(s, w)| s.text != *w) {
            return Err(OracleError::Mismatch(
                "words do not segment as given".into(),
            ));
        }
        Ok(LabeledSequence {
            labels: g.elements.iter().map(|e| TcLabel(e.level)).collect(),
            words: spans,
            prompt_len: g.region_len(Region::Prompt),
            question_len: g.region_len(Region::Question),
            n_levels: g.n_levels,
        })
    }

    /// Autoregressive greedy generation from the prompt and question
    /// instantiated with `question_values` (keyed by slot name).
    pub fn generate(
        &self,
        question_values: &BTreeMap<String, String>,
    ) -> Result<LabeledSequence, OracleError> {
        let g = &self.grammar;
        let free = g.free_slots();
        if let Some(extra) = question_values.keys().find(|k| !free.contains(&k.as_str())) {
            return Err(OracleError::Mismatch(format!(
                "`{extra}` is not a question slot"
            )));
        }
        let head = g.region_len(Region::Prompt) + g.region_len(Region::Question);
        let mut values: Vec<Option<String>> = vec![None; g.elements.len()];
        let mut text = String::new();
        for j in 0..head {
            let word = match &g.elements[j].kind {
                ElementKind::Fixed(t) => t.clone(),
                ElementKind::Slot { slot, lead } => {
                    let v = match g.occurrence(j).unwrap() {
                        Occurrence::Binding => {
                            let v = question_values
                                .get(slot)
                                .ok_or_else(|| OracleError::Unbound(slot.clone()))?;
                            if !g.domain_at(j).unwrap().contains(v) {
                                return Err(OracleError::NotInDomain {
                                    slot: slot.clone(),
                                    value: v.clone(),
                                });
                            }
                            v.clone()
                        }
                        _ => {
                            let c = self.candidates(j, &values)?;
                            c[0].0[lead.len()..].to_owned()
                        }
                    };
                    values[j] = Some(v.clone());
                    format!("{lead}{v}")
                }
            };
            text.push_str(&word);
        }
        let mut tokens = self.tokenize(&text)?;
        let limit = 64 * g.elements.len() + 64;
        loop {
            let next = self.next(&tokens)?.argmax().expect("non-empty support");
            if next.id == EOS_ID {
                break;
            }
            tokens.push(next);
            if tokens.len() > limit {
                return Err(OracleError::Runaway(limit));
            }
        }
        let spans = segment(&tokens, &g.rule).map_err(|e| OracleError::Mismatch(e.to_string()))?;
        let words: Vec<&str> = spans.iter().map(|s| s.text.as_str()).collect();
        let mut seq = self.label_words(&words)?;
        seq.words = spans;
        Ok(seq)
    }

    /// True when replaying the grammar from the sample's question
    /// reproduces the sample exactly.
    pub fn remembers(&self, sample: &LabeledSequence) -> bool {
        let words = sample.word_texts();
        self.bindings_of(&words)
            .and_then(|b| self.generate(&b))
            .is_ok_and(|g| g.word_texts() == words && g.labels == sample.labels)
    }

    pub fn remember(&mut self, sample: LabeledSequence) -> Result<(), OracleError> {
        if !self.remembers(&sample) {
            return Err(OracleError::Mismatch(
                "sample is not reproduced by the grammar".into(),
            ));
        }
        self.remembered.push(sample);
        Ok(())
    }

    pub fn remembered(&self) -> &[LabeledSequence] {
        &self.remembered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::builtin_grammar;

    fn concat() -> Oracle {
        Oracle::from_grammar(builtin_grammar("concat-last-letter").unwrap())
    }

    fn question(words: [&str; 4]) -> BTreeMap<String, String> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("word{}", i + 1), w.to_string()))
            .collect()
    }

    #[test]
    fn generates_concat_answer() {
        let o = concat();
        let seq = o
            .generate(&question(["machine", "learning", "deep", "model"]))
            .unwrap();
        let answer = seq.answer_text();
        assert_eq!(answer.matches("egpl").count(), 2, "{answer}");
        assert!(crate::types::validate_labeled_sequence(&seq).is_empty());
    }

    #[test]
    fn next_at_template_and_slots() {
        let o = concat();
        let seq = o
            .generate(&question(["machine", "learning", "deep", "model"]))
            .unwrap();
        let toks = seq.tokens();
        let start = seq.answer_start();
        let pos = |needle: &str| {
            start
                + seq.word_texts()[start..]
                    .iter()
                    .position(|w| *w == needle)
                    .unwrap()
        };
        let of = pos(" of");
        let d = o.next(&toks[..=of]).unwrap();
        assert_eq!(d.support.len(), 1);
        assert_eq!(d.support[0].text, " machine");
        let d = o.next(&toks[..=of + 2]).unwrap();
        assert_eq!(d.support[0].text, " e");
        let get = pos(" get");
        assert_eq!(o.next(&toks[..=get]).unwrap().support[0].text, " egpl");
        let end = o.next(&toks).unwrap();
        assert_eq!(end.argmax().unwrap(), o.eos());
    }

    #[test]
    fn off_template_prefix_is_refused() {
        let o = concat();
        let toks = o.tokenize("Concatenate the first letters").unwrap();
        assert!(matches!(
            o.next(&toks),
            Err(OracleError::OffTemplate { .. })
        ));
        assert_eq!(o.next(&[]), Err(OracleError::EmptyPrefix));
    }

    #[test]
    fn free_question_slot_is_uniform() {
        let o = concat();
        let toks = o
            .tokenize("Concatenate the last letters of the given words:")
            .unwrap();
        let d = o.next(&toks).unwrap();
        assert_eq!(d.support.len(), 5000);
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbound_and_out_of_domain() {
        let o = concat();
        let mut q = question(["machine", "learning", "deep", "model"]);
        q.remove("word4");
        assert_eq!(o.generate(&q), Err(OracleError::Unbound("word4".into())));
        let q = question(["machine", "learning", "deep", "Model"]);
        assert!(matches!(
            o.generate(&q),
            Err(OracleError::NotInDomain { .. })
        ));
    }

    #[test]
    fn split_words_are_emitted_piecewise() {
        let mut splits = BTreeMap::new();
        splits.insert(
            " machine".to_string(),
            vec![" ma".to_string(), "chine".to_string()],
        );
        let o = Oracle::new(
            builtin_grammar("concat-last-letter").unwrap(),
            OracleConfig {
                splits,
                ..Default::default()
            },
        )
        .unwrap();
        let seq = o
            .generate(&question(["machine", "learning", "deep", "model"]))
            .unwrap();
        let m = seq.words.iter().find(|w| w.text == " machine").unwrap();
        assert_eq!(m.tokens.len(), 2);
        assert_eq!(seq.answer_text().matches("egpl").count(), 2);
    }

    #[test]
    fn epsilon_noise_keeps_argmax() {
        let o = Oracle::new(
            builtin_grammar("concat-last-letter").unwrap(),
            OracleConfig {
                epsilon: 0.1,
                distractors: vec![" the".into(), " banana".into()],
                ..Default::default()
            },
        )
        .unwrap();
        let seq = o
            .generate(&question(["machine", "learning", "deep", "model"]))
            .unwrap();
        assert_eq!(seq.answer_text().matches("egpl").count(), 2);
        let d = o.next(&seq.tokens()[..20]).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!((d.prob_of(o.vocab().id_of(" banana")) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn remember_replays() {
        let mut o = concat();
        let seq = o
            .generate(&question(["apple", "water", "people", "house"]))
            .unwrap();
        assert!(o.remembers(&seq));
        o.remember(seq.clone()).unwrap();
        assert_eq!(o.remembered().len(), 1);
        let mut bad = seq;
        let last = bad.words.len() - 2;
        bad.words[last].text = " nope".into();
        assert!(!o.remembers(&bad));
    }
}
