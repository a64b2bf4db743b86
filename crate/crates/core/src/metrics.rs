//! Per-position output variance, DMV and AUC-ROC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::types::{Distribution, ProbeRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need replacements: got {0} distributions, at least 2 required")]
    NeedReplacements(usize),
    #[error("record at position {0} has no truth label")]
    MissingLabel(usize),
    #[error("no {0} positions among the records")]
    MissingClass(&'static str),
}

/// Summed population variance over the union support (with the other
/// bucket as one more dimension), and the same value divided by `1 - 1/N`
/// and clamped to `[0, 1]`.
pub fn position_variance(dists: &[Distribution]) -> Result<(f64, f64), MetricsError> {
    let n = dists.len();
    if n < 2 {
        return Err(MetricsError::NeedReplacements(n));
    }
    let mut dims: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (i, d) in dists.iter().enumerate() {
        for e in &d.support {
            dims.entry(e.id).or_insert_with(|| vec![0.0; n])[i] += e.p;
        }
    }
    let other: Vec<f64> = dists.iter().map(|d| d.other_mass).collect();
    let raw: f64 = dims
        .values()
        .chain(std::iter::once(&other))
        .map(|xs| population_variance(xs))
        .sum();
    let norm = (raw / (1.0 - 1.0 / n as f64)).clamp(0.0, 1.0);
    Ok((raw, norm))
}

fn population_variance(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn split_by_label(records: &[ProbeRecord]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut content = Vec::new();
    let mut template = Vec::new();
    for r in records {
        let label = r
            .truth_label
            .ok_or(MetricsError::MissingLabel(r.position))?;
        if label.is_template() {
            template.push(r.variance_norm);
        } else {
            content.push(r.variance_norm);
        }
    }
    if content.is_empty() {
        return Err(MetricsError::MissingClass("content"));
    }
    if template.is_empty() {
        return Err(MetricsError::MissingClass("template"));
    }
    Ok((content, template))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean normalized variance of content positions minus that of template
/// positions.
pub fn dmv(records: &[ProbeRecord]) -> Result<f64, MetricsError> {
    let (content, template) = split_by_label(records)?;
    Ok(mean(&content) - mean(&template))
}

/// A score cut-off; positions scoring at or above it are called content.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold(pub f64);

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Threshold(v)),
            Raw::Text(t) if t == "inf" => Ok(Threshold(f64::INFINITY)),
            Raw::Text(t) if t == "-inf" => Ok(Threshold(f64::NEG_INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: Threshold,
    pub tpr: f64,
    pub fpr: f64,
}

/// Trapezoidal area under the ROC curve with content as the positive
/// class. Tied scores form a single point.
pub fn auc_roc(records: &[ProbeRecord]) -> Result<(f64, Vec<SweepPoint>), MetricsError> {
    let (content, template) = split_by_label(records)?;
    let mut scored: Vec<(f64, bool)> = content
        .iter()
        .map(|&s| (s, true))
        .chain(template.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (pos, neg) = (content.len() as f64, template.len() as f64);

    let mut sweep = vec![SweepPoint {
        threshold: Threshold(f64::INFINITY),
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        sweep.push(SweepPoint {
            threshold: Threshold(score),
            tpr: tp as f64 / pos,
            fpr: fp as f64 / neg,
        });
    }
    sweep.push(SweepPoint {
        threshold: Threshold(f64::NEG_INFINITY),
        tpr: 1.0,
        fpr: 1.0,
    });
    let auc = sweep
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok((auc, sweep))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub records: Vec<ProbeRecord>,
    pub dmv: f64,
    pub auc_roc: f64,
    pub n_replacements: usize,
    pub threshold_sweep: Vec<SweepPoint>,
}

impl VarianceReport {
    pub fn from_records(records: Vec<ProbeRecord>) -> Result<Self, MetricsError> {
        let n_replacements = records.first().map_or(0, |r| r.distributions.len());
        let dmv = dmv(&records)?;
        let (auc_roc, threshold_sweep) = auc_roc(&records)?;
        Ok(Self {
            records,
            dmv,
            auc_roc,
            n_replacements,
            threshold_sweep,
        })
    }

    /// Two-column ROC table (false positive rate, true positive rate).
    pub fn roc_table(&self) -> String {
        let mut out = String::from("fpr\ttpr\tthreshold\n");
        for p in &self.threshold_sweep {
            let t = if p.threshold.0.is_finite() {
                p.threshold.0.to_string()
            } else if p.threshold.0 > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            };
            let _ = writeln!(out, "{}\t{}\t{t}", p.fpr, p.tpr);
        }
        out
    }

    /// One row per probed position: index, word, normalized variance and
    /// truth label.
    pub fn variance_bars(&self) -> String {
        let mut out = String::from("position\tword\tvariance\tlabel\n");
        for r in &self.records {
            let label = r.truth_label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{label}",
                r.position,
                r.word.escape_debug(),
                r.variance_norm
            );
        }
        out
    }
}
