//! Binary-classification metrics: confusion counts, accuracy, precision,
//! F1 and rank-based AUC.

use std::fmt;

use crate::error::{Error, Result};

/// Decision threshold; scores equal to it count as positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {l} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("score is NaN".into()));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// `None` when nothing is predicted positive.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `None` when precision or recall is undefined or both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic with midranks:
/// `P(s_pos > s_neg) + 0.5 P(s_pos == s_neg)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Evaluation summary; undefined fractions are NaN with the matching flag cleared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: Confusion,
    pub threshold: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub auc_defined: bool,
    pub f1_defined: bool,
    pub precision_defined: bool,
}

impl MetricsReport {
    pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let counts = confusion(scores, labels, threshold)?;
        let both = labels.contains(&0) && labels.contains(&1);
        let auc = if both { Some(auc(scores, labels)?) } else { None };
        let (precision, f1) = (counts.precision(), counts.f1());
        Ok(Self {
            counts,
            threshold,
            accuracy: counts.accuracy().expect("nonempty"),
            auc: auc.unwrap_or(f64::NAN),
            f1: f1.unwrap_or(f64::NAN),
            precision: precision.unwrap_or(f64::NAN),
            auc_defined: auc.is_some(),
            f1_defined: f1.is_some(),
            precision_defined: precision.is_some(),
        })
    }

    /// The report's keys, in rendering order.
    pub const KEYS: [&'static str; 8] = ["acc", "auc", "f1", "precision", "tp", "fp", "tn", "fn"];

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let frac = |v: f64| if v.is_nan() { "nan".to_string() } else { format!("{v:.4}") };
        let c = self.counts;
        vec![
            ("acc", frac(self.accuracy)),
            ("auc", frac(self.auc)),
            ("f1", frac(self.f1)),
            ("precision", frac(self.precision)),
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("tn", c.tn.to_string()),
            ("fn", c.fn_.to_string()),
        ]
    }

    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}
