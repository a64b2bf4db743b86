//! Executable ideal template/content model driven by a [`TaskGrammar`].

mod builtin;
mod grammar;
mod model;
mod props;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use builtin::{builtin_grammar, BUILTIN_GRAMMARS};
pub use grammar::{
    common_words, ComputedFn, ElementKind, GrammarElement, GrammarError, Occurrence, PointerSource,
    Region, RoleDomain, SlotDef, TaskGrammar, Unknown, COMMON_WORDS_REF,
};
pub use model::{Oracle, OracleConfig, OracleState, EOS_ID, EOS_TEXT};
pub use props::{
    check_hierarchical_generation, check_label_consistency, check_within_task_generalization,
    verify_sparse_dependency, Consistency, DEFAULT_EXHAUSTION_CAP,
};
pub use vocab::{fnv1a64, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("off-template prefix at word {position}: {message}")]
    OffTemplate { position: usize, message: String },
    #[error("unbound role `{0}`")]
    Unbound(String),
    #[error("value {value:?} is not in the domain of slot `{slot}`")]
    NotInDomain { slot: String, value: String },
    #[error("slot `{slot}` cannot be computed from {args:?}")]
    Compute { slot: String, args: Vec<String> },
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("nothing to tokenize")]
    EmptyText,
    #[error("generation did not terminate within {0} tokens")]
    Runaway(usize),
    #[error("exhaustion cap exceeded: {needed} combinations > {cap}")]
    CapExceeded { needed: u128, cap: u128 },
    #[error("sample mismatch: {0}")]
    Mismatch(String),
}

/// Lower-triangular level dependency matrix. `rows[k-1][s-1]` is 1 when
/// level `k` reads level `s`; the diagonal is always 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyMatrix {
    pub rows: Vec<Vec<u8>>,
}

impl DependencyMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self, OracleError> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(OracleError::Mismatch(format!(
                    "row {} must have {} entries",
                    k + 1,
                    k + 1
                )));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(OracleError::Mismatch("entries must be 0 or 1".into()));
            }
            if row[k] != 1 {
                return Err(OracleError::Mismatch(format!(
                    "d[{0}][{0}] must be 1",
                    k + 1
                )));
            }
        }
        if rows.is_empty() {
            return Err(OracleError::Mismatch("empty dependency matrix".into()));
        }
        Ok(Self { rows })
    }

    pub fn full(n_levels: u8) -> Self {
        Self {
            rows: (1..=n_levels as usize).map(|k| vec![1; k]).collect(),
        }
    }

    pub fn n_levels(&self) -> u8 {
        self.rows.len() as u8
    }

    /// `d[k][s]` with 1-based levels, `s <= k`.
    pub fn get(&self, k: u8, s: u8) -> bool {
        self.rows
            .get(k as usize - 1)
            .and_then(|r| r.get(s as usize - 1))
            .is_some_and(|&v| v == 1)
    }

    /// Support set of level `k`: the levels it depends on.
    pub fn support_set(&self, k: u8) -> Vec<u8> {
        (1..=k).filter(|&s| self.get(k, s)).collect()
    }
}

impl fmt::Display for DependencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|r| r.iter().map(u8::to_string).collect::<Vec<_>>().join(","))
            .collect();
        write!(f, "{}", rows.join(";"))
    }
}

/// Parses the `1;0,1;0,1,1` row notation.
impl FromStr for DependencyMatrix {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rows = s
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<u8>()
                            .map_err(|_| OracleError::Mismatch(format!("bad matrix entry {v:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }
}
