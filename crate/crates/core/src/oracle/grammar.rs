//! Task grammars: a fixed word skeleton with typed content slots.
//!
//! Grammars are written as TOML. The prompt, question and answer are
//! template strings in which `{name}` marks a slot occurrence and
//! `{k:text}` marks literal text carried at level `k`:
//!
//! ```toml
//! name = "demo"
//! n_levels = 2
//! prompt = "Name the last letter."
//! question = " The word is {word}."
//! answer = "\nThe last letter of {word} is {letter}."
//!
//! [roles]
//! word = { words = ["apple", "pear"] }
//! letter = { letters = [1, 1] }
//!
//! [slots]
//! word = { role = "word" }
//! letter = { role = "letter", compute = "last_letter", args = ["word"] }
//! ```
//!
//! A slot without `compute` is bound by its first occurrence, which must lie
//! in the prompt or question. Later occurrences point back at the nearest
//! earlier occurrence. Computed slots evaluate their function over the
//! nearest earlier occurrence of each argument.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::wordseg::{split_words, BoundaryRule};

/// The bundled word pool (5000 frequent English words, letters only).
pub const COMMON_WORDS: &str = include_str!("../../data/common_words.txt");

/// `words_file` value that resolves to [`COMMON_WORDS`].
pub const COMMON_WORDS_REF: &str = "@common-words";

pub fn common_words() -> Vec<String> {
    COMMON_WORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("grammar parse error: {0}")]
    Parse(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid grammar: {0}")]
    Invalid(String),
    #[error("empty content domain for role `{0}`")]
    EmptyDomain(String),
}

fn invalid(msg: impl Into<String>) -> GrammarError {
    GrammarError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Prompt,
    Question,
    Answer,
}

/// Value set of a content role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleDomain {
    Words(Vec<String>),
    /// Decimal integers in `min..=max`.
    Integers {
        min: i64,
        max: i64,
    },
    /// Lowercase ASCII strings with length in `min_len..=max_len`.
    Letters {
        min_len: usize,
        max_len: usize,
    },
}

impl RoleDomain {
    pub fn contains(&self, value: &str) -> bool {
        match self {
            RoleDomain::Words(ws) => ws.iter().any(|w| w == value),
            RoleDomain::Integers { min, max } => {
                canonical_int(value).is_some_and(|v| v >= *min && v <= *max)
            }
            RoleDomain::Letters { min_len, max_len } => {
                let n = value.chars().count();
                n >= *min_len && n <= *max_len && value.chars().all(|c| c.is_ascii_lowercase())
            }
        }
    }

    /// Number of values, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        match self {
            RoleDomain::Words(ws) => ws.len() as u128,
            RoleDomain::Integers { min, max } => {
                if max < min {
                    0
                } else {
                    (*max as i128 - *min as i128 + 1) as u128
                }
            }
            RoleDomain::Letters { min_len, max_len } => (*min_len..=*max_len)
                .map(|l| 26u128.saturating_pow(l as u32))
                .fold(0u128, |a, b| a.saturating_add(b)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// All values in canonical order, or `None` when there are more than `cap`.
    pub fn enumerate(&self, cap: u128) -> Option<Vec<String>> {
        if self.size() > cap {
            return None;
        }
        Some(match self {
            RoleDomain::Words(ws) => ws.clone(),
            RoleDomain::Integers { min, max } => (*min..=*max).map(|v| v.to_string()).collect(),
            RoleDomain::Letters { min_len, max_len } => {
                let mut out = Vec::new();
                for len in *min_len..=*max_len {
                    let mut cur = vec![String::new()];
                    for _ in 0..len {
                        cur = cur
                            .into_iter()
                            .flat_map(|p| ('a'..='z').map(move |c| format!("{p}{c}")))
                            .collect();
                    }
                    out.extend(cur);
                }
                out
            }
        })
    }
}

/// Parses a decimal integer written without sign noise or leading zeros.
fn canonical_int(value: &str) -> Option<i64> {
    let v: i64 = value.parse().ok()?;
    (v.to_string() == value).then_some(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unknown {
    X,
    Y,
}

/// Pure functions a computed slot may apply to earlier slot values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputedFn {
    /// Last character of the single argument.
    LastLetter,
    /// Concatenation of all arguments.
    Concat,
    /// Integer solution of `a1 x + b1 y = r1`, `a2 x + b2 y = r2`, with
    /// `coefficients = [a1, b1, a2, b2]` and arguments `[r1, r2]`.
    SolveLinear {
        coefficients: [i64; 4],
        unknown: Unknown,
    },
    /// `x op y` for arguments `[x, op, y]`, op one of plus/minus/times.
    Arith,
}

impl ComputedFn {
    fn arity(&self) -> Option<usize> {
        match self {
            ComputedFn::LastLetter => Some(1),
            ComputedFn::Concat => None,
            ComputedFn::SolveLinear { .. } => Some(2),
            ComputedFn::Arith => Some(3),
        }
    }

    /// Evaluates the function; `None` when the arguments admit no value.
    pub fn apply(&self, args: &[&str]) -> Option<String> {
        match self {
            ComputedFn::LastLetter => args.first()?.chars().last().map(|c| c.to_string()),
            ComputedFn::Concat => Some(args.concat()),
            ComputedFn::SolveLinear {
                coefficients,
                unknown,
            } => {
                let r1 = canonical_int(args.first()?)?;
                let r2 = canonical_int(args.get(1)?)?;
                let [a1, b1, a2, b2] = *coefficients;
                let det = a1 * b2 - a2 * b1;
                if det == 0 {
                    return None;
                }
                let num = match unknown {
                    Unknown::X => r1 * b2 - r2 * b1,
                    Unknown::Y => a1 * r2 - a2 * r1,
                };
                (num % det == 0).then(|| (num / det).to_string())
            }
            ComputedFn::Arith => {
                let x = canonical_int(args.first()?)?;
                let y = canonical_int(args.get(2)?)?;
                let v = match *args.get(1)? {
                    "plus" | "+" => x.checked_add(y)?,
                    "minus" | "-" => x.checked_sub(y)?,
                    "times" | "*" => x.checked_mul(y)?,
                    _ => return None,
                };
                Some(v.to_string())
            }
        }
    }
}

/// Where a slot's value comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointerSource {
    /// Bound by the question (or prompt); later occurrences copy it.
    Question,
    Computed {
        func: ComputedFn,
        args: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub role: String,
    pub level: u8,
    pub source: PointerSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Fixed(String),
    /// A slot occurrence; the rendered word is `lead` followed by the value.
    Slot {
        slot: String,
        lead: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarElement {
    pub kind: ElementKind,
    pub level: u8,
    pub region: Region,
}

impl GrammarElement {
    pub fn slot_name(&self) -> Option<&str> {
        match &self.kind {
            ElementKind::Slot { slot, .. } => Some(slot),
            ElementKind::Fixed(_) => None,
        }
    }
}

/// How an occurrence of a slot obtains its value during generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Occurrence {
    /// First occurrence of a question-bound slot: an input, not generated.
    Binding,
    /// Copy of the value at element index `from`.
    Copy { from: usize },
    /// Function of the values at the given element indices.
    Compute { func: ComputedFn, from: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskGrammar {
    pub name: String,
    pub n_levels: u8,
    pub elements: Vec<GrammarElement>,
    pub slots: BTreeMap<String, SlotDef>,
    pub content_roles: BTreeMap<String, RoleDomain>,
    pub rule: BoundaryRule,
    /// Per element: resolved occurrence for slots, `None` for fixed words.
    occurrences: Vec<Option<Occurrence>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    name: String,
    n_levels: u8,
    prompt: String,
    #[serde(default)]
    question: String,
    answer: String,
    roles: BTreeMap<String, RoleSpec>,
    #[serde(default)]
    slots: BTreeMap<String, SlotSpec>,
    #[serde(default)]
    boundary_chars: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleSpec {
    words: Option<Vec<String>>,
    words_file: Option<String>,
    integers: Option<[i64; 2]>,
    letters: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotSpec {
    role: String,
    level: Option<u8>,
    compute: Option<String>,
    #[serde(default)]
    args: Vec<String>,
    coefficients: Option<[i64; 4]>,
    unknown: Option<Unknown>,
}

enum Piece {
    Literal { text: String, level: Option<u8> },
    Slot(String),
}

fn parse_template(src: &str) -> Result<Vec<Piece>, GrammarError> {
    let mut pieces = Vec::new();
    let mut rest = src;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Literal {
                text: rest[..open].to_owned(),
                level: None,
            });
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| invalid(format!("unclosed `{{` in template: {src:?}")))?
            + open;
        let inner = &rest[open + 1..close];
        match inner.split_once(':') {
            Some((lvl, text)) if !lvl.is_empty() && lvl.chars().all(|c| c.is_ascii_digit()) => {
                let level: u8 = lvl
                    .parse()
                    .map_err(|_| invalid(format!("bad level `{lvl}`")))?;
                pieces.push(Piece::Literal {
                    text: text.to_owned(),
                    level: Some(level),
                });
            }
            _ => {
                let name = inner.trim();
                if name.is_empty()
                    || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    || name.starts_with(|c: char| c.is_ascii_digit())
                {
                    return Err(invalid(format!("bad slot name `{inner}`")));
                }
                pieces.push(Piece::Slot(name.to_owned()));
            }
        }
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal {
            text: rest.to_owned(),
            level: None,
        });
    }
    Ok(pieces)
}

impl TaskGrammar {
    /// Loads a grammar file; relative `words_file` paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path).map_err(|e| GrammarError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, GrammarError> {
        let file: GrammarFile =
            toml::from_str(text).map_err(|e| GrammarError::Parse(e.to_string()))?;
        let rule = match &file.boundary_chars {
            Some(chars) => BoundaryRule::new(chars.chars()).map_err(|e| invalid(e.to_string()))?,
            None => BoundaryRule::default(),
        };

        let mut content_roles = BTreeMap::new();
        for (name, spec) in &file.roles {
            content_roles.insert(name.clone(), role_domain(name, spec, base_dir)?);
        }

        let mut slots = BTreeMap::new();
        for (name, spec) in &file.slots {
            let source = match spec.compute.as_deref() {
                None => {
                    if !spec.args.is_empty() {
                        return Err(invalid(format!("slot `{name}` has args but no compute")));
                    }
                    PointerSource::Question
                }
                Some(f) => {
                    let func = match f {
                        "last_letter" => ComputedFn::LastLetter,
                        "concat" => ComputedFn::Concat,
                        "arith" => ComputedFn::Arith,
                        "solve_linear" => ComputedFn::SolveLinear {
                            coefficients: spec.coefficients.ok_or_else(|| {
                                invalid(format!("slot `{name}`: solve_linear needs coefficients"))
                            })?,
                            unknown: spec.unknown.ok_or_else(|| {
                                invalid(format!("slot `{name}`: solve_linear needs unknown"))
                            })?,
                        },
                        other => {
                            return Err(invalid(format!(
                                "slot `{name}`: unknown function `{other}`"
                            )))
                        }
                    };
                    PointerSource::Computed {
                        func,
                        args: spec.args.clone(),
                    }
                }
            };
            slots.insert(
                name.clone(),
                SlotDef {
                    name: name.clone(),
                    role: spec.role.clone(),
                    level: spec.level.unwrap_or(file.n_levels),
                    source,
                },
            );
        }

        let mut elements = Vec::new();
        let regions = [
            (Region::Prompt, &file.prompt, 1u8),
            (Region::Question, &file.question, file.n_levels),
            (Region::Answer, &file.answer, 1u8),
        ];
        for (region, src, default_level) in regions {
            for piece in parse_template(src)? {
                match piece {
                    Piece::Literal { text, level } => {
                        let level = level.unwrap_or(default_level);
                        for w in split_words(&text, &rule) {
                            elements.push(GrammarElement {
                                kind: ElementKind::Fixed(w.to_owned()),
                                level,
                                region,
                            });
                        }
                    }
                    Piece::Slot(name) => {
                        let def = slots
                            .get(&name)
                            .ok_or_else(|| invalid(format!("undefined slot `{name}`")))?;
                        let lead = match elements.last() {
                            Some(GrammarElement {
                                kind: ElementKind::Fixed(t),
                                ..
                            }) if t.chars().all(char::is_whitespace) => {
                                let lead = t.clone();
                                elements.pop();
                                lead
                            }
                            _ => String::new(),
                        };
                        elements.push(GrammarElement {
                            kind: ElementKind::Slot {
                                slot: name.clone(),
                                lead,
                            },
                            level: def.level,
                            region,
                        });
                    }
                }
            }
        }

        Self::build(
            file.name,
            file.n_levels,
            elements,
            slots,
            content_roles,
            rule,
        )
    }

    /// Validates the parts and resolves slot occurrences.
    pub fn build(
        name: String,
        n_levels: u8,
        elements: Vec<GrammarElement>,
        slots: BTreeMap<String, SlotDef>,
        content_roles: BTreeMap<String, RoleDomain>,
        rule: BoundaryRule,
    ) -> Result<Self, GrammarError> {
        if n_levels < 2 {
            return Err(invalid("n_levels must be at least 2"));
        }
        if elements.is_empty() {
            return Err(invalid("grammar has no elements"));
        }
        for def in slots.values() {
            let domain = content_roles.get(&def.role).ok_or_else(|| {
                invalid(format!(
                    "slot `{}` uses unknown role `{}`",
                    def.name, def.role
                ))
            })?;
            if domain.is_empty() {
                return Err(GrammarError::EmptyDomain(def.role.clone()));
            }
            if def.level < 1 || def.level > n_levels {
                return Err(invalid(format!(
                    "slot `{}` level {} out of range",
                    def.name, def.level
                )));
            }
            if let PointerSource::Computed { func, args } = &def.source {
                if let Some(n) = func.arity() {
                    if args.len() != n {
                        return Err(invalid(format!("slot `{}` expects {n} args", def.name)));
                    }
                }
                if args.is_empty() {
                    return Err(invalid(format!("slot `{}` has no args", def.name)));
                }
            }
        }
        for (role, domain) in &content_roles {
            if let RoleDomain::Words(ws) = domain {
                if let Some(bad) = ws.iter().find(|w| !rule.is_word_body(w)) {
                    return Err(invalid(format!(
                        "role `{role}` value {bad:?} is not a single word"
                    )));
                }
            }
        }

        let mut occurrences = Vec::with_capacity(elements.len());
        let mut last_seen: HashMap<&str, usize> = HashMap::new();
        for (i, el) in elements.iter().enumerate() {
            if el.level < 1 || el.level > n_levels {
                return Err(invalid(format!(
                    "element {i} level {} out of range",
                    el.level
                )));
            }
            match el.region {
                Region::Prompt if el.level != 1 => {
                    return Err(invalid(format!("prompt element {i} must be level 1")))
                }
                Region::Question if el.level == 1 => {
                    return Err(invalid(format!("question element {i} must be content")))
                }
                _ => {}
            }
            let occ = match &el.kind {
                ElementKind::Fixed(t) => {
                    if t.is_empty() {
                        return Err(invalid(format!("element {i} is empty")));
                    }
                    None
                }
                ElementKind::Slot { slot, lead } => {
                    if i > 0 && !rule.starts_word(lead) {
                        return Err(invalid(format!(
                            "slot `{slot}` must be preceded by whitespace to start a word"
                        )));
                    }
                    if let Some(next) = elements.get(i + 1) {
                        let starts = match &next.kind {
                            ElementKind::Fixed(t) => rule.starts_word(t),
                            ElementKind::Slot { lead, .. } => rule.starts_word(lead),
                        };
                        if !starts {
                            return Err(invalid(format!(
                                "text after slot `{slot}` must start a new word"
                            )));
                        }
                    }
                    let def = &slots[slot.as_str()];
                    let occ = match &def.source {
                        PointerSource::Question => match last_seen.get(slot.as_str()) {
                            Some(&from) => Occurrence::Copy { from },
                            None => {
                                if el.region == Region::Answer {
                                    return Err(invalid(format!(
                                        "slot `{slot}` is first used in the answer but has no compute"
                                    )));
                                }
                                Occurrence::Binding
                            }
                        },
                        PointerSource::Computed { func, args } => {
                            let mut from = Vec::with_capacity(args.len());
                            for a in args {
                                let idx = last_seen.get(a.as_str()).ok_or_else(|| {
                                    invalid(format!("slot `{slot}` reads `{a}` before it occurs"))
                                })?;
                                if elements[*idx].level > el.level {
                                    return Err(invalid(format!(
                                        "slot `{slot}` (level {}) reads higher-level `{a}`",
                                        el.level
                                    )));
                                }
                                from.push(*idx);
                            }
                            Occurrence::Compute {
                                func: func.clone(),
                                from,
                            }
                        }
                    };
                    if let Occurrence::Copy { from } = occ {
                        if elements[from].level > el.level {
                            return Err(invalid(format!(
                                "slot `{slot}` copies a higher-level occurrence"
                            )));
                        }
                    }
                    if occ == Occurrence::Binding {
                        let domain = &content_roles[&def.role];
                        if domain.enumerate(1_000_000).is_none() {
                            return Err(invalid(format!(
                                "question slot `{slot}` needs an enumerable role domain"
                            )));
                        }
                    }
                    last_seen.insert(slot.as_str(), i);
                    Some(occ)
                }
            };
            occurrences.push(occ);
        }
        for name in slots.keys() {
            if !last_seen.contains_key(name.as_str()) {
                return Err(invalid(format!("slot `{name}` is never used")));
            }
        }

        Ok(Self {
            name,
            n_levels,
            elements,
            slots,
            content_roles,
            rule,
            occurrences,
        })
    }

    pub fn occurrence(&self, index: usize) -> Option<&Occurrence> {
        self.occurrences.get(index).and_then(Option::as_ref)
    }

    /// Role domain of the slot at element `index`.
    pub fn domain_at(&self, index: usize) -> Option<&RoleDomain> {
        let slot = self.elements.get(index)?.slot_name()?;
        self.content_roles.get(&self.slots[slot].role)
    }

    pub fn region_len(&self, region: Region) -> usize {
        self.elements.iter().filter(|e| e.region == region).count()
    }

    /// Names of question-bound slots in order of their binding occurrence.
    pub fn free_slots(&self) -> Vec<&str> {
        self.elements
            .iter()
            .zip(&self.occurrences)
            .filter(|(_, o)| matches!(o, Some(Occurrence::Binding)))
            .filter_map(|(e, _)| e.slot_name())
            .collect()
    }

    /// Replaces the domain of `role`, e.g. to plug in a different word pool.
    pub fn with_role_domain(
        mut self,
        role: &str,
        domain: RoleDomain,
    ) -> Result<Self, GrammarError> {
        if !self.content_roles.contains_key(role) {
            return Err(invalid(format!("unknown role `{role}`")));
        }
        if domain.is_empty() {
            return Err(GrammarError::EmptyDomain(role.to_owned()));
        }
        if let RoleDomain::Words(ws) = &domain {
            if let Some(bad) = ws.iter().find(|w| !self.rule.is_word_body(w)) {
                return Err(invalid(format!(
                    "role `{role}` value {bad:?} is not a single word"
                )));
            }
        }
        self.content_roles.insert(role.to_owned(), domain);
        Ok(self)
    }

    /// Direct level dependencies implied by the slot sources: entry
    /// `[k-1][s-1]` is true when some level-`k` word reads a level-`s` word.
    pub fn derived_dependency(&self) -> super::DependencyMatrix {
        let n = self.n_levels as usize;
        let mut rows: Vec<Vec<u8>> = (0..n)
            .map(|k| {
                let mut r = vec![0u8; k + 1];
                r[k] = 1;
                r
            })
            .collect();
        for (i, occ) in self.occurrences.iter().enumerate() {
            let k = self.elements[i].level as usize;
            let sources: Vec<usize> = match occ {
                Some(Occurrence::Copy { from }) => vec![*from],
                Some(Occurrence::Compute { from, .. }) => from.clone(),
                _ => continue,
            };
            for src in sources {
                let s = self.elements[src].level as usize;
                rows[k - 1][s - 1] = 1;
            }
        }
        super::DependencyMatrix { rows }
    }
}

fn role_domain(
    name: &str,
    spec: &RoleSpec,
    base_dir: Option<&Path>,
) -> Result<RoleDomain, GrammarError> {
    let given = [
        spec.words.is_some(),
        spec.words_file.is_some(),
        spec.integers.is_some(),
        spec.letters.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given != 1 {
        return Err(invalid(format!(
            "role `{name}` needs exactly one of words, words_file, integers, letters"
        )));
    }
    let domain = if let Some(ws) = &spec.words {
        RoleDomain::Words(ws.clone())
    } else if let Some(file) = &spec.words_file {
        if file == COMMON_WORDS_REF {
            RoleDomain::Words(common_words())
        } else {
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => Path::new(file).to_path_buf(),
            };
            let text = std::fs::read_to_string(&path).map_err(|e| GrammarError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            RoleDomain::Words(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned)
                    .collect(),
            )
        }
    } else if let Some([min, max]) = spec.integers {
        RoleDomain::Integers { min, max }
    } else if let Some([min_len, max_len]) = spec.letters {
        RoleDomain::Letters { min_len, max_len }
    } else {
        unreachable!()
    };
    if domain.is_empty() {
        return Err(GrammarError::EmptyDomain(name.to_owned()));
    }
    Ok(domain)
}
