//! Autoregressive variance-based template/content classifier.
//!
//! `N` copies of the prompt, each with different content, are advanced in
//! lock step over a reference sentence. At each word the next-token
//! distributions of the copies are compared: if they spread out, the word
//! is content and every copy continues with its own greedily decoded word;
//! otherwise the word is template and the reference word is appended to
//! every copy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::datasets::ProbeDataset;
use crate::metrics::{position_variance, MetricsError};
use crate::types::{Distribution, TcLabel, TokenProb, TokenRef};
use crate::wordseg::{segment, split_words, word_complete, BoundaryRule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("invalid prompt spec: {0}")]
    Spec(String),
    #[error("degenerate distribution: all mass was filtered")]
    Degenerate,
    #[error("runaway content: no word boundary after {0} tokens")]
    Runaway(usize),
    #[error("prefix integrity violated: {0}")]
    Integrity(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMethod {
    Renormalize,
    SkipRedistribute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    ConcatLetters,
    SingleEq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub threshold: f64,
    pub n_replacements: usize,
    pub filter_tokens: Vec<String>,
    pub filter_method: FilterMethod,
    pub redistribute_min_p: f64,
    pub boundary_rule: BoundaryRule,
    pub max_content_tokens: usize,
}

pub fn default_filter_tokens() -> Vec<String> {
    [" ", "\n", " \u{201c}", " \""]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            n_replacements: 8,
            filter_tokens: default_filter_tokens(),
            filter_method: FilterMethod::Renormalize,
            redistribute_min_p: 0.01,
            boundary_rule: BoundaryRule::default(),
            max_content_tokens: 16,
        }
    }
}

impl ClassifierConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::ConcatLetters => Self::default(),
            Profile::SingleEq => {
                let mut filter_tokens = default_filter_tokens();
                filter_tokens.push(" $".into());
                Self {
                    threshold: 0.35,
                    filter_tokens,
                    filter_method: FilterMethod::SkipRedistribute,
                    ..Self::default()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let bad = |m: String| Err(ClassifyError::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must be in (0, 1)", self.threshold));
        }
        if self.n_replacements < 2 {
            return bad("n_replacements must be at least 2".into());
        }
        if !(self.redistribute_min_p > 0.0 && self.redistribute_min_p < 1.0) {
            return bad(format!(
                "redistribute_min_p {} must be in (0, 1)",
                self.redistribute_min_p
            ));
        }
        if self.max_content_tokens == 0 {
            return bad("max_content_tokens must be at least 1".into());
        }
        if self.boundary_rule.boundary_prefixes.is_empty() {
            return bad("boundary rule is empty".into());
        }
        Ok(())
    }

    fn is_filtered(&self, text: &str) -> bool {
        self.filter_tokens.iter().any(|f| f == text)
    }
}

#[derive(Default)]
struct Accumulator {
    mass: BTreeMap<u32, (String, f64)>,
    other: f64,
}

fn accumulate(
    dist: &Distribution,
    weight: f64,
    lookup: &mut dyn FnMut(&[TokenRef]) -> Result<Distribution, BackendError>,
    config: &ClassifierConfig,
    chain: &mut Vec<TokenRef>,
    acc: &mut Accumulator,
) -> Result<(), ClassifyError> {
    for e in &dist.support {
        if !config.is_filtered(&e.text) {
            acc.mass
                .entry(e.id)
                .or_insert_with(|| (e.text.clone(), 0.0))
                .1 += weight * e.p;
            continue;
        }
        let redistribute = config.filter_method == FilterMethod::SkipRedistribute
            && chain.len() < 2
            && e.p > config.redistribute_min_p;
        if redistribute {
            chain.push(TokenRef::new(e.id, e.text.clone()));
            let next = lookup(chain)?;
            accumulate(&next, weight * e.p, lookup, config, chain, acc)?;
            chain.pop();
        }
    }
    acc.other += weight * dist.other_mass;
    Ok(())
}

/// Removes the configured filter tokens from `dist`. With
/// [`FilterMethod::SkipRedistribute`], the mass of a filtered token above
/// `redistribute_min_p` is spread over the distribution that follows it
/// (`lookup` receives the filtered tokens to append to the prefix); at most
/// two filtered tokens are skipped in a row.
pub fn filter_distribution(
    dist: &Distribution,
    lookup: &mut dyn FnMut(&[TokenRef]) -> Result<Distribution, BackendError>,
    config: &ClassifierConfig,
) -> Result<Distribution, ClassifyError> {
    if !dist.support.iter().any(|e| config.is_filtered(&e.text)) {
        return Ok(dist.clone());
    }
    let mut acc = Accumulator::default();
    accumulate(dist, 1.0, lookup, config, &mut Vec::new(), &mut acc)?;
    let total: f64 = acc.mass.values().map(|(_, p)| p).sum::<f64>() + acc.other;
    if total.is_nan() || total <= 0.0 {
        return Err(ClassifyError::Degenerate);
    }
    let mut out = Distribution {
        support: acc
            .mass
            .into_iter()
            .map(|(id, (text, p))| TokenProb {
                id,
                text,
                p: p / total,
            })
            .collect(),
        other_mass: acc.other / total,
    };
    out.sort_desc();
    Ok(out)
}

fn is_eos(backend: &dyn Backend, tok: &TokenRef) -> bool {
    backend.eos_token().is_some_and(|e| e.text == tok.text)
}

/// Greedy argmax decoding of one word after `prefix`. The first token
/// skips filtered tokens; decoding stops before the next token that starts
/// a word, or at end of text.
pub fn decode_content_word(
    backend: &dyn Backend,
    prefix: &[TokenRef],
    config: &ClassifierConfig,
) -> Result<Vec<TokenRef>, ClassifyError> {
    let mut emitted: Vec<TokenRef> = Vec::new();
    let mut context = prefix.to_vec();
    loop {
        let d = backend.next_distribution(&context)?;
        let tok = if emitted.is_empty() {
            d.support
                .iter()
                .filter(|e| !config.is_filtered(&e.text))
                .max_by(|a, b| a.p.total_cmp(&b.p).then(b.id.cmp(&a.id)))
                .map(|e| TokenRef::new(e.id, e.text.clone()))
        } else {
            d.argmax()
        }
        .ok_or(ClassifyError::Degenerate)?;
        if is_eos(backend, &tok) || word_complete(&emitted, &tok, &config.boundary_rule) {
            return Ok(emitted);
        }
        if emitted.len() == config.max_content_tokens {
            return Err(ClassifyError::Runaway(config.max_content_tokens));
        }
        context.push(tok.clone());
        emitted.push(tok);
    }
}

/// A prompt word; content words carry one replacement per perturbed copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptWord {
    pub text: String,
    pub label: TcLabel,
    #[serde(default)]
    pub replacements: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub words: Vec<PromptWord>,
}

impl PromptSpec {
    /// Prompt and question of the reference, with content words replaced
    /// by the corresponding words of each replacement sequence.
    pub fn from_dataset(ds: &ProbeDataset) -> Self {
        let r = &ds.reference;
        Self {
            words: (0..r.answer_start())
                .map(|j| PromptWord {
                    text: r.words[j].text.clone(),
                    label: r.labels[j],
                    replacements: if r.labels[j].is_template() {
                        Vec::new()
                    } else {
                        ds.replacements
                            .iter()
                            .map(|s| s.words[j].text.clone())
                            .collect()
                    },
                })
                .collect(),
        }
    }

    pub fn n_replacements(&self) -> usize {
        self.words
            .iter()
            .find(|w| !w.label.is_template())
            .map_or(0, |w| w.replacements.len())
    }

    fn validate(&self, n: usize, rule: &BoundaryRule) -> Result<(), ClassifyError> {
        let bad = |m: String| Err(ClassifyError::Spec(m));
        if self.words.is_empty() {
            return bad("empty prompt".into());
        }
        if self.words.iter().all(|w| w.label.is_template()) {
            return bad("prompt has no content words to replace".into());
        }
        for (j, w) in self.words.iter().enumerate() {
            if split_words(&w.text, rule).len() != 1 {
                return bad(format!("word {j} ({:?}) is not a single word", w.text));
            }
            if w.label.is_template() {
                if !w.replacements.is_empty() {
                    return bad(format!("template word {j} has replacements"));
                }
                continue;
            }
            if w.replacements.len() != n {
                return bad(format!(
                    "content word {j} has {} replacements, expected {n}",
                    w.replacements.len()
                ));
            }
            if let Some(r) = w
                .replacements
                .iter()
                .find(|r| split_words(r, rule).len() != 1)
            {
                return bad(format!(
                    "replacement {r:?} of word {j} is not a single word"
                ));
            }
        }
        Ok(())
    }

    fn copy_text(&self, i: usize) -> String {
        self.words
            .iter()
            .map(|w| {
                if w.label.is_template() {
                    w.text.as_str()
                } else {
                    w.replacements[i].as_str()
                }
            })
            .collect()
    }
}

/// A template word whose copy would have continued differently.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub replacement: usize,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedWord {
    pub text: String,
    pub label: TcLabel,
    pub variance: f64,
    /// Per copy: the decoded word (content words only).
    pub fill_ins: Vec<String>,
    /// Copies whose most likely first token differs from the reference
    /// word (template words only).
    pub divergences: Vec<Divergence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedSentence {
    pub words: Vec<ClassifiedWord>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl ClassifiedSentence {
    pub fn labels(&self) -> Vec<TcLabel> {
        self.words.iter().map(|w| w.label).collect()
    }

    /// Inline markup: template words in `<t>`, content words in `<c>`.
    pub fn annotate(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            let tag = if w.label.is_template() { "t" } else { "c" };
            let _ = write!(out, "<{tag}>{}</{tag}>", escape(&w.text));
        }
        out
    }
}

fn check_integrity(copies: &[Vec<(String, bool)>]) -> Result<(), ClassifyError> {
    let first = &copies[0];
    for (i, c) in copies.iter().enumerate().skip(1) {
        if c.len() != first.len() {
            return Err(ClassifyError::Integrity(format!(
                "copy {i} has {} words, copy 0 has {}",
                c.len(),
                first.len()
            )));
        }
        for (j, (a, b)) in first.iter().zip(c).enumerate() {
            if a.1 != b.1 || (a.1 && a.0 != b.0) {
                return Err(ClassifyError::Integrity(format!(
                    "copy {i} differs from copy 0 at template word {j}"
                )));
            }
        }
    }
    Ok(())
}

/// Labels every word of `sentence` as template or content.
pub fn classify(
    backend: &dyn Backend,
    spec: &PromptSpec,
    sentence: &str,
    config: &ClassifierConfig,
) -> Result<ClassifiedSentence, ClassifyError> {
    config.validate()?;
    let n = config.n_replacements;
    spec.validate(n, &config.boundary_rule)?;
    let tokens = backend.tokenize(sentence)?;
    let words =
        segment(&tokens, &config.boundary_rule).map_err(|e| ClassifyError::Spec(e.to_string()))?;

    let mut prefixes: Vec<Vec<TokenRef>> = (0..n)
        .map(|i| backend.tokenize(&spec.copy_text(i)))
        .collect::<Result<_, _>>()?;
    let mut copies: Vec<Vec<(String, bool)>> = (0..n)
        .map(|i| {
            spec.words
                .iter()
                .map(|w| {
                    let t = w.label.is_template();
                    (
                        if t {
                            w.text.clone()
                        } else {
                            w.replacements[i].clone()
                        },
                        t,
                    )
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(words.len());
    for word in &words {
        let dists = backend.batch_next(&prefixes)?;
        let filtered = dists
            .iter()
            .zip(&prefixes)
            .map(|(d, prefix)| {
                let mut lookup = |chain: &[TokenRef]| {
                    let mut p = prefix.clone();
                    p.extend_from_slice(chain);
                    backend.next_distribution(&p)
                };
                filter_distribution(d, &mut lookup, config)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (_, variance) = position_variance(&filtered)?;

        if variance > config.threshold {
            let mut fill_ins = Vec::with_capacity(n);
            for (prefix, copy) in prefixes.iter_mut().zip(copies.iter_mut()) {
                let decoded = decode_content_word(backend, prefix, config)?;
                let text: String = decoded.iter().map(|t| t.text.as_str()).collect();
                prefix.extend(decoded);
                copy.push((text.clone(), false));
                fill_ins.push(text);
            }
            out.push(ClassifiedWord {
                text: word.text.clone(),
                label: TcLabel::CONTENT,
                variance,
                fill_ins,
                divergences: Vec::new(),
            });
        } else {
            let expected = &word.tokens[0].text;
            let divergences = filtered
                .iter()
                .enumerate()
                .filter_map(|(i, d)| {
                    let top = d.argmax()?;
                    (top.text != *expected).then_some(Divergence {
                        replacement: i,
                        predicted: top.text,
                    })
                })
                .collect();
            for (prefix, copy) in prefixes.iter_mut().zip(copies.iter_mut()) {
                prefix.extend(word.tokens.iter().cloned());
                copy.push((word.text.clone(), true));
            }
            out.push(ClassifiedWord {
                text: word.text.clone(),
                label: TcLabel::TEMPLATE,
                variance,
                fill_ins: Vec::new(),
                divergences,
            });
        }
        check_integrity(&copies)?;
    }
    Ok(ClassifiedSentence { words: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendInfo;
    use proptest::prelude::*;

    fn tp(id: u32, text: &str, p: f64) -> TokenProb {
        TokenProb {
            id,
            text: text.into(),
            p,
        }
    }

    fn skip_config() -> ClassifierConfig {
        ClassifierConfig {
            filter_method: FilterMethod::SkipRedistribute,
            ..Default::default()
        }
    }

    #[test]
    fn skip_redistribute_moves_space_mass() {
        let d = Distribution::new(vec![tp(1, " ", 0.3), tp(2, " cat", 0.7)], 0.0).unwrap();
        let mut calls = 0;
        let mut lookup = |chain: &[TokenRef]| {
            calls += 1;
            assert_eq!(chain.len(), 1);
            Ok(Distribution::one_hot(TokenRef::new(2, " cat")))
        };
        let out = filter_distribution(&d, &mut lookup, &skip_config()).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.support.len(), 1);
        assert!((out.prob_of(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_filtered_mass_is_renormalized_without_lookup() {
        let d = Distribution::new(
            vec![tp(1, " ", 0.005), tp(2, " cat", 0.5), tp(3, " dog", 0.495)],
            0.0,
        )
        .unwrap();
        let mut lookup =
            |_: &[TokenRef]| -> Result<Distribution, BackendError> { panic!("no lookup expected") };
        let out = filter_distribution(&d, &mut lookup, &skip_config()).unwrap();
        assert!((out.prob_of(2) - 0.5 / 0.995).abs() < 1e-12);
    }

    #[test]
    fn no_filtered_tokens_is_identity() {
        let d = Distribution::new(vec![tp(2, " cat", 0.6), tp(3, " dog", 0.3)], 0.1).unwrap();
        let mut lookup = |_: &[TokenRef]| -> Result<Distribution, BackendError> { unreachable!() };
        let out = filter_distribution(&d, &mut lookup, &ClassifierConfig::default()).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn all_filtered_is_degenerate() {
        let d = Distribution::new(vec![tp(1, " ", 0.5), tp(2, "\n", 0.5)], 0.0).unwrap();
        let mut lookup = |_: &[TokenRef]| -> Result<Distribution, BackendError> { unreachable!() };
        assert_eq!(
            filter_distribution(&d, &mut lookup, &ClassifierConfig::default()),
            Err(ClassifyError::Degenerate)
        );
    }

    #[test]
    fn redistribution_recurses_once() {
        let d = Distribution::new(vec![tp(1, " ", 1.0)], 0.0).unwrap();
        let mut depth_seen = 0;
        let mut lookup = |chain: &[TokenRef]| {
            depth_seen = depth_seen.max(chain.len());
            if chain.len() == 1 {
                Ok(Distribution::new(vec![tp(3, "\n", 0.5), tp(2, " cat", 0.5)], 0.0).unwrap())
            } else {
                Ok(Distribution::new(vec![tp(1, " ", 0.5), tp(4, " dog", 0.5)], 0.0).unwrap())
            }
        };
        let out = filter_distribution(&d, &mut lookup, &skip_config()).unwrap();
        assert_eq!(depth_seen, 2);
        assert!((out.prob_of(2) - 0.5 / 0.75).abs() < 1e-12);
        assert!((out.prob_of(4) - 0.25 / 0.75).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ClassifierConfig::default().validate().is_ok());
        for t in [0.0, 1.0, -0.5, f64::NAN] {
            let c = ClassifierConfig {
                threshold: t,
                ..Default::default()
            };
            assert!(c.validate().is_err());
        }
        let single_eq = ClassifierConfig::profile(Profile::SingleEq);
        assert!(single_eq.filter_tokens.contains(&" $".to_string()));
        assert_eq!(single_eq.threshold, 0.35);
        assert!(!ClassifierConfig::default()
            .filter_tokens
            .contains(&" $".to_string()));
    }

    /// Always predicts the same non-boundary token.
    struct Looping;

    impl Backend for Looping {
        fn info(&self) -> Result<BackendInfo, BackendError> {
            unreachable!()
        }
        fn tokenize(&self, _: &str) -> Result<Vec<TokenRef>, BackendError> {
            unreachable!()
        }
        fn next_distribution(&self, _: &[TokenRef]) -> Result<Distribution, BackendError> {
            Ok(Distribution::one_hot(TokenRef::new(5, "la")))
        }
        fn eos_token(&self) -> Option<TokenRef> {
            None
        }
    }

    #[test]
    fn runaway_content_is_an_error() {
        let err = decode_content_word(
            &Looping,
            &[TokenRef::new(1, "x")],
            &ClassifierConfig::default(),
        );
        assert_eq!(err, Err(ClassifyError::Runaway(16)));
    }

    fn arb_distribution() -> impl Strategy<Value = Distribution> {
        let texts = [" ", "\n", " \u{201c}", " \"", " a", " b", "c", " d"];
        proptest::collection::vec(0.0f64..1.0, 9).prop_map(move |w| {
            let total: f64 = w.iter().sum::<f64>() + 1e-3;
            let support: Vec<TokenProb> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| tp(i as u32, t, w[i] / total))
                .collect();
            let other = 1.0 - support.iter().map(|e| e.p).sum::<f64>();
            Distribution {
                support,
                other_mass: other.max(0.0),
            }
        })
    }

    proptest! {
        #[test]
        fn filtering_conserves_mass(d in arb_distribution(), next in arb_distribution(), skip in any::<bool>()) {
            let config = if skip { skip_config() } else { ClassifierConfig::default() };
            let mut lookup = |_: &[TokenRef]| Ok(next.clone());
            match filter_distribution(&d, &mut lookup, &config) {
                Ok(out) => {
                    prop_assert!((out.total_mass() - 1.0).abs() < 1e-9);
                    prop_assert!(out.support.iter().all(|e| !config.filter_tokens.contains(&e.text)));
                }
                Err(e) => prop_assert_eq!(e, ClassifyError::Degenerate),
            }
        }
    }
}
