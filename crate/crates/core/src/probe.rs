//! Measures per-position output variance of a backend over a probe dataset.

use crate::backend::{Backend, BackendError};
use crate::datasets::ProbeDataset;
use crate::metrics::{position_variance, MetricsError};
use crate::types::{LabeledSequence, ProbeRecord, TokenRef, WordSpan};
use crate::wordseg::{segment, BoundaryRule, SegmentError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("variant {variant}: {message}")]
    Alignment { variant: usize, message: String },
}

/// Tokenizes `seq` with the backend and checks the words come out as in
/// the dataset.
pub fn align_words(
    backend: &dyn Backend,
    seq: &LabeledSequence,
    rule: &BoundaryRule,
    variant: usize,
) -> Result<Vec<WordSpan>, ProbeError> {
    let tokens = backend.tokenize(&seq.text())?;
    let words = segment(&tokens, rule)?;
    let fail = |message: String| ProbeError::Alignment { variant, message };
    if words.len() != seq.len() {
        return Err(fail(format!(
            "backend produced {} words, dataset has {}",
            words.len(),
            seq.len()
        )));
    }
    if let Some((j, (w, d))) = words
        .iter()
        .zip(&seq.words)
        .enumerate()
        .find(|(_, (w, d))| w.text != d.text)
    {
        return Err(fail(format!(
            "word {j} is {:?}, expected {:?}",
            w.text, d.text
        )));
    }
    Ok(words)
}

/// One record per answer word: the next-token distributions of the `N`
/// replacements just before that word, and their variance.
pub fn probe(
    backend: &dyn Backend,
    ds: &ProbeDataset,
    rule: &BoundaryRule,
) -> Result<Vec<ProbeRecord>, ProbeError> {
    let variants: Vec<Vec<WordSpan>> = ds
        .replacements
        .iter()
        .enumerate()
        .map(|(i, s)| align_words(backend, s, rule, i + 1))
        .collect::<Result<_, _>>()?;
    let r = &ds.reference;
    let mut out = Vec::with_capacity(r.len() - r.answer_start());
    for j in r.answer_start()..r.len() {
        let prefixes: Vec<Vec<TokenRef>> = variants
            .iter()
            .map(|ws| {
                ws[..j]
                    .iter()
                    .flat_map(|w| w.tokens.iter().cloned())
                    .collect()
            })
            .collect();
        let distributions = backend.batch_next(&prefixes)?;
        let (variance_raw, variance_norm) = position_variance(&distributions)?;
        out.push(ProbeRecord {
            position: j,
            word: r.words[j].text.clone(),
            distributions,
            variance_raw,
            variance_norm,
            truth_label: Some(r.labels[j]),
        });
    }
    Ok(out)
}

/// Records of all datasets, in order.
pub fn probe_all(
    backend: &dyn Backend,
    datasets: &[ProbeDataset],
    rule: &BoundaryRule,
) -> Result<Vec<ProbeRecord>, ProbeError> {
    let mut out = Vec::new();
    for ds in datasets {
        out.extend(probe(backend, ds, rule)?);
    }
    Ok(out)
}
