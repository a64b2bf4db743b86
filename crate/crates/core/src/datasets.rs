//! Probe datasets with aligned content replacements, and augmentation
//! corpora built from them.
//!
//! Every sample draws its randomness from a ChaCha stream keyed by
//! `(seed, sample index)`, so output does not depend on generation order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::{builtin_grammar, ElementKind, Oracle, OracleError, RoleDomain, TaskGrammar};
use crate::types::{validate_labeled_sequence, LabeledSequence, TcLabel, TokenRef, WordSpan};
use crate::wordseg::{split_words, BoundaryRule};

const MAX_RETRIES: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("word pool too small: need {needed}, have {have}")]
    PoolTooSmall { needed: usize, have: usize },
    #[error("no integer solution found after {0} retries")]
    NoSolution(usize),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("alignment violated in group {group}: {message}")]
    Alignment { group: u64, message: String },
    #[error("answer failed verification: {0}")]
    Verification(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

fn invalid(msg: impl Into<String>) -> DatasetError {
    DatasetError::Invalid(msg.into())
}

pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A reference sequence and `N` content-replaced variants of it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub reference: LabeledSequence,
    pub replacements: Vec<LabeledSequence>,
    pub grammar_name: String,
    pub seed: u64,
    /// Word indices filled by grammar slots.
    pub content_slots: Vec<usize>,
}

/// One line of a dataset or corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub grammar_name: String,
    pub prompt: String,
    pub question: String,
    pub answer: String,
    pub word_labels: Vec<TcLabel>,
    pub content_slots: Vec<usize>,
    pub replacement_group: u64,
    /// 0 is the reference of its group.
    pub variant: usize,
    pub n_levels: u8,
    pub seed: u64,
}

/// Placeholder token id for text that has not been through a backend.
fn text_token(text: &str) -> TokenRef {
    TokenRef::new(
        (crate::oracle::fnv1a64(text) % u64::from(u32::MAX)) as u32,
        text,
    )
}

impl DatasetRecord {
    pub fn from_sequence(
        seq: &LabeledSequence,
        grammar_name: &str,
        content_slots: &[usize],
        group: u64,
        variant: usize,
        seed: u64,
    ) -> Self {
        Self {
            id: format!("{grammar_name}-{group:05}-{variant}"),
            grammar_name: grammar_name.to_owned(),
            prompt: seq.prompt_text(),
            question: seq.question_text(),
            answer: seq.answer_text(),
            word_labels: seq.labels.clone(),
            content_slots: content_slots.to_vec(),
            replacement_group: group,
            variant,
            n_levels: seq.n_levels,
            seed,
        }
    }

    /// Rebuilds the labeled sequence, one token per word.
    pub fn to_sequence(&self, rule: &BoundaryRule) -> Result<LabeledSequence, DatasetError> {
        let prompt = split_words(&self.prompt, rule);
        let question = split_words(&self.question, rule);
        let answer = split_words(&self.answer, rule);
        let words: Vec<WordSpan> = prompt
            .iter()
            .chain(&question)
            .chain(&answer)
            .enumerate()
            .map(|(i, w)| WordSpan::single(text_token(w), i))
            .collect();
        let seq = LabeledSequence {
            words,
            labels: self.word_labels.clone(),
            prompt_len: prompt.len(),
            question_len: question.len(),
            n_levels: self.n_levels,
        };
        if let Some(v) = validate_labeled_sequence(&seq).first() {
            return Err(invalid(format!("record {}: {v}", self.id)));
        }
        Ok(seq)
    }
}

impl ProbeDataset {
    pub fn n_replacements(&self) -> usize {
        self.replacements.len()
    }

    pub fn to_records(&self, group: u64) -> Vec<DatasetRecord> {
        std::iter::once(&self.reference)
            .chain(&self.replacements)
            .enumerate()
            .map(|(v, s)| {
                DatasetRecord::from_sequence(
                    s,
                    &self.grammar_name,
                    &self.content_slots,
                    group,
                    v,
                    self.seed,
                )
            })
            .collect()
    }

    /// Checks the cross-sequence alignment invariant.
    pub fn check_alignment(&self, group: u64) -> Result<(), DatasetError> {
        let fail = |message: String| DatasetError::Alignment { group, message };
        let r = &self.reference;
        if self.replacements.len() < 2 {
            return Err(fail("need at least 2 replacements".into()));
        }
        for (i, s) in std::iter::once(r).chain(&self.replacements).enumerate() {
            if let Some(v) = validate_labeled_sequence(s).first() {
                return Err(fail(format!("variant {i}: {v}")));
            }
            if s.len() != r.len() || s.labels != r.labels {
                return Err(fail(format!(
                    "variant {i} is not aligned with the reference"
                )));
            }
            if s.prompt_len != r.prompt_len || s.question_len != r.question_len {
                return Err(fail(format!("variant {i} has different region lengths")));
            }
            for j in 0..r.len() {
                if r.labels[j].is_template() && s.words[j].text != r.words[j].text {
                    return Err(fail(format!("variant {i} changes template word {j}")));
                }
            }
        }
        for &j in &self.content_slots {
            if j >= r.len() || r.labels[j].is_template() {
                return Err(fail(format!("content slot {j} is not a content word")));
            }
            if self
                .replacements
                .iter()
                .all(|s| s.words[j].text == r.words[j].text)
            {
                return Err(fail(format!("content word {j} is never replaced")));
            }
        }
        Ok(())
    }
}

/// Groups records by `replacement_group`, variant 0 first.
pub fn datasets_from_records(
    records: &[DatasetRecord],
    rule: &BoundaryRule,
) -> Result<Vec<ProbeDataset>, DatasetError> {
    let mut groups: BTreeMap<u64, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.replacement_group).or_default().push(r);
    }
    let mut out = Vec::new();
    for (group, mut recs) in groups {
        recs.sort_by_key(|r| r.variant);
        if recs.first().map(|r| r.variant) != Some(0) {
            return Err(invalid(format!("group {group} has no reference record")));
        }
        let seqs = recs
            .iter()
            .map(|r| r.to_sequence(rule))
            .collect::<Result<Vec<_>, _>>()?;
        let mut seqs = seqs.into_iter();
        let ds = ProbeDataset {
            reference: seqs.next().unwrap(),
            replacements: seqs.collect(),
            grammar_name: recs[0].grammar_name.clone(),
            seed: recs[0].seed,
            content_slots: recs[0].content_slots.clone(),
        };
        ds.check_alignment(group)?;
        out.push(ds);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| invalid(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::Record {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChickenRabbitRanges {
    pub heads: (i64, i64),
    pub legs: (i64, i64),
}

impl Default for ChickenRabbitRanges {
    fn default() -> Self {
        Self {
            heads: (10, 50),
            legs: (20, 200),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ConcatLastLetter,
    ConcatAlt,
    ChickenRabbit,
}

impl TaskKind {
    pub fn grammar_name(self) -> &'static str {
        match self {
            TaskKind::ConcatLastLetter => "concat-last-letter",
            TaskKind::ConcatAlt => "concat-alt",
            TaskKind::ChickenRabbit => "chicken-rabbit",
        }
    }
}

/// Samples questions for one task and verifies generated answers.
#[derive(Debug)]
pub struct TaskSampler {
    kind: TaskKind,
    oracle: Oracle,
    by_letter: BTreeMap<char, Vec<String>>,
    ranges: ChickenRabbitRanges,
}

const CONCAT_WORD_SLOTS: [&str; 4] = ["word1", "word2", "word3", "word4"];

impl TaskSampler {
    pub fn concat(kind: TaskKind, word_pool: &[String]) -> Result<Self, DatasetError> {
        if kind == TaskKind::ChickenRabbit {
            return Err(invalid("chicken-rabbit is not a concatenation task"));
        }
        let pool: BTreeSet<&String> = word_pool.iter().collect();
        if pool.len() < 4 {
            return Err(DatasetError::PoolTooSmall {
                needed: 4,
                have: pool.len(),
            });
        }
        if let Some(bad) = pool
            .iter()
            .find(|w| w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase()))
        {
            return Err(invalid(format!(
                "pool word {bad:?} is not lowercase ASCII letters"
            )));
        }
        let mut by_letter: BTreeMap<char, Vec<String>> = BTreeMap::new();
        for w in &pool {
            by_letter
                .entry(w.chars().last().unwrap())
                .or_default()
                .push((*w).clone());
        }
        let grammar = builtin_grammar(kind.grammar_name())
            .and_then(|g| {
                g.with_role_domain(
                    "word",
                    RoleDomain::Words(pool.into_iter().cloned().collect()),
                )
            })
            .map_err(OracleError::from)?;
        Ok(Self {
            kind,
            oracle: Oracle::from_grammar(grammar),
            by_letter,
            ranges: ChickenRabbitRanges::default(),
        })
    }

    pub fn chicken_rabbit(ranges: ChickenRabbitRanges) -> Result<Self, DatasetError> {
        let grammar = builtin_grammar("chicken-rabbit").map_err(OracleError::from)?;
        let (h0, h1) = ranges.heads;
        let (l0, l1) = ranges.legs;
        let heads_ok = grammar.content_roles["heads"].contains(&h0.to_string())
            && grammar.content_roles["heads"].contains(&h1.to_string());
        let legs_ok = grammar.content_roles["legs"].contains(&l0.to_string())
            && grammar.content_roles["legs"].contains(&l1.to_string());
        if h0 > h1 || l0 > l1 || !heads_ok || !legs_ok {
            return Err(invalid(format!(
                "ranges heads {h0}..={h1}, legs {l0}..={l1} are outside the grammar's domains"
            )));
        }
        if (h0..=h1).all(|h| l1 < 2 * h || l0 > 4 * h) {
            return Err(DatasetError::NoSolution(0));
        }
        Ok(Self {
            kind: TaskKind::ChickenRabbit,
            oracle: Oracle::from_grammar(grammar),
            by_letter: BTreeMap::new(),
            ranges,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn grammar(&self) -> &TaskGrammar {
        self.oracle.grammar()
    }

    /// Word indices of slot occurrences.
    pub fn content_slots(&self) -> Vec<usize> {
        self.grammar()
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.kind, ElementKind::Slot { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    fn sample_heads_legs(&self, rng: &mut ChaCha8Rng) -> Result<(i64, i64), DatasetError> {
        let (h0, h1) = self.ranges.heads;
        let (l0, l1) = self.ranges.legs;
        for _ in 0..MAX_RETRIES {
            let h = rng.random_range(h0..=h1);
            let l = rng.random_range(l0..=l1);
            if l % 2 == 0 && 2 * h <= l && l <= 4 * h {
                return Ok((h, l));
            }
        }
        Err(DatasetError::NoSolution(MAX_RETRIES))
    }

    /// A uniformly random question.
    pub fn sample_question(
        &self,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<String, String>, DatasetError> {
        let g = self.grammar();
        let mut q = BTreeMap::new();
        match self.kind {
            TaskKind::ChickenRabbit => {
                for slot in ["obj1", "obj2"] {
                    let RoleDomain::Words(ws) = &g.content_roles[&g.slots[slot].role] else {
                        unreachable!("object roles are word lists")
                    };
                    q.insert(slot.to_owned(), ws.choose(rng).unwrap().clone());
                }
                let (h, l) = self.sample_heads_legs(rng)?;
                q.insert("heads".into(), h.to_string());
                q.insert("legs".into(), l.to_string());
            }
            _ => {
                for slot in CONCAT_WORD_SLOTS {
                    let letter = *self.by_letter.keys().choose(rng).unwrap();
                    let w = self.by_letter[&letter].choose(rng).unwrap();
                    q.insert(slot.to_owned(), w.clone());
                }
            }
        }
        Ok(q)
    }

    /// `n + 1` questions: a reference and `n` replacements, each differing
    /// from the reference in every question slot. For the concatenation
    /// tasks the words of a slot also have pairwise distinct last letters.
    pub fn sample_group(
        &self,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<BTreeMap<String, String>>, DatasetError> {
        match self.kind {
            TaskKind::ChickenRabbit => {
                let reference = self.sample_question(rng)?;
                let mut out = vec![reference.clone()];
                while out.len() < n + 1 {
                    let mut found = None;
                    for _ in 0..MAX_RETRIES {
                        let q = self.sample_question(rng)?;
                        if q.iter().all(|(k, v)| reference[k] != *v) {
                            found = Some(q);
                            break;
                        }
                    }
                    out.push(found.ok_or(DatasetError::NoSolution(MAX_RETRIES))?);
                }
                Ok(out)
            }
            _ => {
                let letters: Vec<char> = self.by_letter.keys().copied().collect();
                if letters.len() < n + 1 {
                    return Err(DatasetError::PoolTooSmall {
                        needed: n + 1,
                        have: letters.len(),
                    });
                }
                let mut out = vec![BTreeMap::new(); n + 1];
                for slot in CONCAT_WORD_SLOTS {
                    let chosen = letters.iter().choose_multiple(rng, n + 1);
                    for (q, letter) in out.iter_mut().zip(chosen) {
                        let w = self.by_letter[letter].choose(rng).unwrap();
                        q.insert(slot.to_owned(), w.clone());
                    }
                }
                for slot in CONCAT_WORD_SLOTS {
                    let mut col: Vec<String> = out.iter().map(|q| q[slot].clone()).collect();
                    rand::seq::SliceRandom::shuffle(col.as_mut_slice(), rng);
                    for (q, w) in out.iter_mut().zip(col) {
                        q.insert(slot.to_owned(), w);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Re-derives the answer from the question without the grammar's
    /// computed functions.
    pub fn verify(&self, seq: &LabeledSequence) -> Result<(), DatasetError> {
        let g = self.grammar();
        if seq.len() != g.elements.len() {
            return Err(DatasetError::Verification("wrong length".into()));
        }
        let mut slots: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (el, w) in g.elements.iter().zip(&seq.words) {
            match &el.kind {
                ElementKind::Slot { slot, lead } => {
                    let v = w.text.strip_prefix(lead.as_str()).ok_or_else(|| {
                        DatasetError::Verification(format!("slot {slot} lost its lead"))
                    })?;
                    slots.entry(slot).or_default().push(v);
                }
                ElementKind::Fixed(t) if *t != w.text => {
                    return Err(DatasetError::Verification(format!(
                        "expected {t:?}, found {:?}",
                        w.text
                    )))
                }
                ElementKind::Fixed(_) => {}
            }
        }
        let all_equal = |vs: &Vec<&str>| vs.windows(2).all(|p| p[0] == p[1]);
        if let Some((name, _)) = slots.iter().find(|(_, vs)| !all_equal(vs)) {
            return Err(DatasetError::Verification(format!(
                "occurrences of {name} disagree"
            )));
        }
        let one = |name: &str| slots[name][0];
        let fail = |m: String| Err(DatasetError::Verification(m));
        match self.kind {
            TaskKind::ChickenRabbit => {
                let num = |name: &str| one(name).parse::<i64>().unwrap_or(-1);
                let (h, l, x, y) = (num("heads"), num("legs"), num("n1"), num("n2"));
                if x < 0 || y < 0 || x + y != h || 2 * x + 4 * y != l {
                    return fail(format!("{x} and {y} do not solve heads={h}, legs={l}"));
                }
            }
            _ => {
                let mut expected = String::new();
                for i in 1..=4 {
                    let last = one(&format!("word{i}")).chars().last().unwrap_or('?');
                    if one(&format!("letter{i}")) != last.to_string() {
                        return fail(format!("letter{i} is not the last letter of word{i}"));
                    }
                    expected.push(last);
                }
                if one("answer") != expected {
                    return fail(format!("answer {} != {expected}", one("answer")));
                }
            }
        }
        Ok(())
    }

    fn generate_verified(
        &self,
        q: &BTreeMap<String, String>,
    ) -> Result<LabeledSequence, DatasetError> {
        let seq = self.oracle.generate(q)?;
        self.verify(&seq)?;
        Ok(seq)
    }

    /// `n_samples` probe datasets with `n_replacements` variants each.
    pub fn probe_datasets(
        &self,
        n_samples: usize,
        n_replacements: usize,
        seed: u64,
    ) -> Result<Vec<ProbeDataset>, DatasetError> {
        if n_replacements < 2 {
            return Err(invalid("need at least 2 replacements"));
        }
        let slots = self.content_slots();
        (0..n_samples)
            .map(|i| {
                let mut rng = rng_for(seed, i as u64);
                for _ in 0..MAX_RETRIES {
                    let group = self.sample_group(n_replacements, &mut rng)?;
                    let mut seqs = group
                        .iter()
                        .map(|q| self.generate_verified(q))
                        .collect::<Result<Vec<_>, _>>()?
                        .into_iter();
                    let ds = ProbeDataset {
                        reference: seqs.next().unwrap(),
                        replacements: seqs.collect(),
                        grammar_name: self.grammar().name.clone(),
                        seed,
                        content_slots: slots.clone(),
                    };
                    match ds.check_alignment(i as u64) {
                        Ok(()) => return Ok(ds),
                        Err(DatasetError::Alignment { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                Err(DatasetError::NoSolution(MAX_RETRIES))
            })
            .collect()
    }
}

pub fn gen_concat_last_letter(
    word_pool: &[String],
    n_samples: usize,
    n_replacements: usize,
    seed: u64,
) -> Result<Vec<ProbeDataset>, DatasetError> {
    TaskSampler::concat(TaskKind::ConcatLastLetter, word_pool)?.probe_datasets(
        n_samples,
        n_replacements,
        seed,
    )
}

pub fn gen_concat_alt_template(
    word_pool: &[String],
    n_samples: usize,
    n_replacements: usize,
    seed: u64,
) -> Result<Vec<ProbeDataset>, DatasetError> {
    TaskSampler::concat(TaskKind::ConcatAlt, word_pool)?.probe_datasets(
        n_samples,
        n_replacements,
        seed,
    )
}

pub fn gen_chicken_rabbit(
    ranges: ChickenRabbitRanges,
    n_samples: usize,
    n_replacements: usize,
    seed: u64,
) -> Result<Vec<ProbeDataset>, DatasetError> {
    TaskSampler::chicken_rabbit(ranges)?.probe_datasets(n_samples, n_replacements, seed)
}

/// `k` freshly sampled, verified question/answer pairs per source problem,
/// each differing from its source question.
pub fn augment_content_replacement(
    sampler: &TaskSampler,
    sources: &[ProbeDataset],
    k: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if k == 0 {
        return Err(invalid("k_per_sample must be at least 1"));
    }
    let name = &sampler.grammar().name;
    let slots = sampler.content_slots();
    let mut out = Vec::with_capacity(sources.len() * k);
    for (i, src) in sources.iter().enumerate() {
        if src.grammar_name != *name {
            return Err(invalid(format!(
                "source {i} is from grammar {}, not {name}",
                src.grammar_name
            )));
        }
        let reference = sampler.oracle().bindings_of(&src.reference.word_texts())?;
        let mut rng = rng_for(seed, i as u64);
        for v in 0..k {
            let mut found = None;
            for _ in 0..MAX_RETRIES {
                let q = sampler.sample_question(&mut rng)?;
                if q != reference {
                    found = Some(q);
                    break;
                }
            }
            let q = found.ok_or(DatasetError::NoSolution(MAX_RETRIES))?;
            let seq = sampler.generate_verified(&q)?;
            out.push(DatasetRecord::from_sequence(
                &seq, name, &slots, i as u64, v, seed,
            ));
        }
    }
    Ok(out)
}

/// Replaces each word found in `table` by a uniformly chosen synonym with
/// probability `p_replace`. Leading whitespace or punctuation is kept and
/// labels are left as they are.
pub fn augment_random_synonym(
    records: &[DatasetRecord],
    table: &BTreeMap<String, Vec<String>>,
    p_replace: f64,
    seed: u64,
    rule: &BoundaryRule,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    if table.is_empty() || table.values().any(Vec::is_empty) {
        return Err(invalid("synonym table must be non-empty"));
    }
    if !(p_replace > 0.0 && p_replace <= 1.0) {
        return Err(invalid(format!("p_replace {p_replace} must be in (0, 1]")));
    }
    if let Some(bad) = table.values().flatten().find(|s| !rule.is_word_body(s)) {
        return Err(invalid(format!("synonym {bad:?} is not a single word")));
    }
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let mut rng = rng_for(seed, i as u64);
        let mut replace = |text: &str| -> String {
            split_words(text, rule)
                .into_iter()
                .map(|w| {
                    let body_at = w
                        .char_indices()
                        .find(|(_, c)| !rule.is_boundary(*c))
                        .map_or(w.len(), |(i, _)| i);
                    let (lead, body) = w.split_at(body_at);
                    match table.get(body) {
                        Some(syns) if rng.random_bool(p_replace) => {
                            format!("{lead}{}", syns.choose(&mut rng).unwrap())
                        }
                        _ => w.to_owned(),
                    }
                })
                .collect()
        };
        let mut r = rec.clone();
        r.prompt = replace(&rec.prompt);
        r.question = replace(&rec.question);
        r.answer = replace(&rec.answer);
        out.push(r);
    }
    Ok(out)
}
