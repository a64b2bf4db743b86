//! Executable checks of the template/content propositions over an oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grammar::{ElementKind, Region};
use super::model::Oracle;
use super::{DependencyMatrix, OracleError};
use crate::types::LabeledSequence;

pub const DEFAULT_EXHAUSTION_CAP: u128 = 100_000;

/// Whether a sample set can be spliced level by level, and the splice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consistency {
    pub consistent: bool,
    pub combined: Option<LabeledSequence>,
}

/// Generates from the remembered prompt with a new question and compares
/// the top-level template words position by position.
pub fn check_within_task_generalization(
    oracle: &Oracle,
    remembered: &LabeledSequence,
    new_question: &BTreeMap<String, String>,
) -> bool {
    let g = oracle.grammar();
    let Ok(mut bindings) = oracle.bindings_of(&remembered.word_texts()) else {
        return false;
    };
    for (slot, value) in new_question {
        let in_prompt = g
            .elements
            .iter()
            .any(|e| e.region == Region::Prompt && e.slot_name() == Some(slot.as_str()));
        if !in_prompt {
            bindings.insert(slot.clone(), value.clone());
        }
    }
    let Ok(generated) = oracle.generate(&bindings) else {
        return false;
    };
    generated.len() == remembered.len()
        && generated.labels == remembered.labels
        && generated
            .words
            .iter()
            .zip(&remembered.words)
            .zip(&remembered.labels)
            .all(|((a, b), l)| !l.is_template() || a.text == b.text)
}

/// Splices `samples` (sample `k` supplies the level-`k` words) and checks
/// that every level-`k` word sees, at the earlier levels it depends on, the
/// same words as in its own sample.
pub fn check_label_consistency(
    samples: &[LabeledSequence],
    oracle: &Oracle,
) -> Result<Consistency, OracleError> {
    let g = oracle.grammar();
    let first = samples
        .first()
        .ok_or_else(|| OracleError::Mismatch("no samples".into()))?;
    if samples.len() > g.n_levels as usize {
        return Err(OracleError::Mismatch(format!(
            "{} samples for {} levels",
            samples.len(),
            g.n_levels
        )));
    }
    for s in samples {
        if s.len() != first.len() {
            return Err(OracleError::Mismatch(format!(
                "sample lengths differ ({} vs {})",
                s.len(),
                first.len()
            )));
        }
        if s.n_levels != g.n_levels {
            return Err(OracleError::Mismatch(format!(
                "sample has {} levels, grammar has {}",
                s.n_levels, g.n_levels
            )));
        }
    }
    let rejected = Consistency {
        consistent: false,
        combined: None,
    };
    if samples.iter().any(|s| s.labels != first.labels) {
        return Ok(rejected);
    }
    let source = |level: u8| samples.len().min(level as usize) - 1;
    let d = g.derived_dependency();
    let mut combined = first.clone();
    for (j, l) in first.labels.iter().enumerate() {
        combined.words[j] = samples[source(l.level())].words[j].clone();
    }
    for (j, lk) in first.labels.iter().enumerate() {
        let own = &samples[source(lk.level())];
        for (i, ls) in first.labels[..j].iter().enumerate() {
            if ls.level() < lk.level()
                && d.get(lk.level(), ls.level())
                && combined.words[i].text != own.words[i].text
            {
                return Ok(rejected);
            }
        }
    }
    Ok(Consistency {
        consistent: true,
        combined: Some(combined),
    })
}

/// Label-consistent, remembered samples must splice into exactly what the
/// oracle generates from the spliced prompt and question.
pub fn check_hierarchical_generation(samples: &[LabeledSequence], oracle: &Oracle) -> bool {
    let Ok(Consistency {
        consistent: true,
        combined: Some(combined),
    }) = check_label_consistency(samples, oracle)
    else {
        return false;
    };
    if !samples.iter().all(|s| oracle.remembers(s)) {
        return false;
    }
    oracle
        .bindings_of(&combined.word_texts())
        .and_then(|b| oracle.generate(&b))
        .is_ok_and(|g| g.word_texts() == combined.word_texts() && g.labels == combined.labels)
}

fn cartesian(domains: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    for d in domains {
        out = out
            .into_iter()
            .flat_map(|p| {
                d.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    out
}

fn argmax_after(oracle: &Oracle, words: &[String]) -> Option<String> {
    let tokens = oracle.tokenize(&words.concat()).ok()?;
    Some(oracle.next(&tokens).ok()?.argmax()?.text)
}

/// For every zero `d[k][s]` claimed, replaces the level-`s` slot values of
/// every sample with every value combination and checks that the oracle's
/// prediction at each level-`k` answer word never changes.
pub fn verify_sparse_dependency(
    oracle: &Oracle,
    claimed: &DependencyMatrix,
    cap: u128,
) -> Result<bool, OracleError> {
    let g = oracle.grammar();
    if claimed.n_levels() != g.n_levels {
        return Err(OracleError::Mismatch(format!(
            "matrix has {} levels, grammar has {}",
            claimed.n_levels(),
            g.n_levels
        )));
    }
    let enumerate = |role: &str| {
        let d = &g.content_roles[role];
        d.enumerate(cap).ok_or(OracleError::CapExceeded {
            needed: d.size(),
            cap,
        })
    };
    let free = g.free_slots();
    let free_domains = free
        .iter()
        .map(|s| enumerate(&g.slots[*s].role))
        .collect::<Result<Vec<_>, _>>()?;
    let base_count = free_domains
        .iter()
        .fold(1u128, |a, d| a.saturating_mul(d.len() as u128));

    let mut checks = Vec::new();
    for k in 1..=g.n_levels {
        for s in 1..k {
            if claimed.get(k, s) {
                continue;
            }
            let slots: Vec<&str> = g
                .slots
                .values()
                .filter(|d| d.level == s)
                .map(|d| d.name.as_str())
                .collect();
            let domains = slots
                .iter()
                .map(|n| enumerate(&g.slots[*n].role))
                .collect::<Result<Vec<_>, _>>()?;
            let combos = domains
                .iter()
                .fold(1u128, |a, d| a.saturating_mul(d.len() as u128));
            let needed = base_count.saturating_mul(combos);
            if needed > cap {
                return Err(OracleError::CapExceeded { needed, cap });
            }
            checks.push((k, slots, cartesian(&domains)));
        }
    }
    if checks.is_empty() {
        return Ok(true);
    }

    let answer_start = g.region_len(Region::Prompt) + g.region_len(Region::Question);
    for values in cartesian(&free_domains) {
        let bindings: BTreeMap<String, String> =
            free.iter().map(|s| s.to_string()).zip(values).collect();
        let Ok(base) = oracle.generate(&bindings) else {
            continue;
        };
        let base_words: Vec<String> = base.words.iter().map(|w| w.text.clone()).collect();
        for (k, slots, combos) in &checks {
            let targets: Vec<usize> = (answer_start..base.len())
                .filter(|&j| base.labels[j].level() == *k)
                .collect();
            let expected: Vec<Option<String>> = targets
                .iter()
                .map(|&j| argmax_after(oracle, &base_words[..j]))
                .collect();
            for combo in combos {
                let mut words = base_words.clone();
                for (j, el) in g.elements.iter().enumerate() {
                    if let ElementKind::Slot { slot, lead } = &el.kind {
                        if let Some(pos) = slots.iter().position(|s| s == slot) {
                            words[j] = format!("{lead}{}", combo[pos]);
                        }
                    }
                }
                for (t, &j) in targets.iter().enumerate() {
                    if argmax_after(oracle, &words[..j]) != expected[t] {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}
