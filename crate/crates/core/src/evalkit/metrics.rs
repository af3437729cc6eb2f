use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and ground truth for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub slice_id: String,
    pub patient_id: String,
    pub scores: Vec<f64>,
    pub true_labels: Vec<bool>,
}

impl PredictionRecord {
    pub fn new(
        slice_id: impl Into<String>,
        patient_id: impl Into<String>,
        scores: Vec<f64>,
        true_labels: Vec<bool>,
    ) -> Result<Self> {
        if scores.len() != true_labels.len() || scores.is_empty() {
            return Err(Error::Shape(format!(
                "{} scores for {} labels",
                scores.len(),
                true_labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("prediction scores must be finite".into()));
        }
        Ok(Self {
            slice_id: slice_id.into(),
            patient_id: patient_id.into(),
            scores,
            true_labels,
        })
    }

    pub fn classes(&self) -> usize {
        self.scores.len()
    }

    /// Predicted label set: classes whose score reaches the class threshold.
    pub fn predicted(&self, thresholds: &[f64]) -> Vec<bool> {
        self.scores.iter().zip(thresholds).map(|(s, t)| s >= t).collect()
    }
}

/// Set-based scores averaged over records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `a / b`, with `0 / 0` read as 1 when both label sets are empty and 0 otherwise.
fn ratio(a: usize, b: usize, both_empty: bool) -> f64 {
    if b == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn check(records: &[PredictionRecord], thresholds: &[f64]) -> Result<usize> {
    let c = records
        .first()
        .ok_or_else(|| Error::Data("no prediction records".into()))?
        .classes();
    if thresholds.len() != c || records.iter().any(|r| r.classes() != c) {
        return Err(Error::Shape(format!("records and thresholds must all have {c} classes")));
    }
    Ok(c)
}

/// Hamming-score accuracy, example-based precision and recall, and their
/// harmonic mean.
///
/// Per record with truth `T` and prediction `S`: accuracy `|T∩S|/|T∪S|`,
/// precision `|T∩S|/|S|`, recall `|T∩S|/|T|`. A record with both sets empty
/// scores 1 on every term; any other empty denominator scores 0.
pub fn multilabel_metrics(records: &[PredictionRecord], thresholds: &[f64]) -> Result<SetMetrics> {
    check(records, thresholds)?;
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for r in records {
        let (mut inter, mut union, mut t, mut s) = (0, 0, 0, 0);
        for (&truth, pred) in r.true_labels.iter().zip(r.predicted(thresholds)) {
            inter += (truth && pred) as usize;
            union += (truth || pred) as usize;
            t += truth as usize;
            s += pred as usize;
        }
        let both_empty = union == 0;
        acc += ratio(inter, union, both_empty);
        prec += ratio(inter, s, both_empty);
        rec += ratio(inter, t, both_empty);
    }
    let n = records.len() as f64;
    let (precision, recall) = (prec / n, rec / n);
    Ok(SetMetrics {
        accuracy: acc / n,
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Binary precision, recall and F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn per_class_f1(records: &[PredictionRecord], class: usize, threshold: f64) -> Result<ClassMetrics> {
    let c = records
        .first()
        .ok_or_else(|| Error::Data("no prediction records".into()))?
        .classes();
    if class >= c {
        return Err(Error::param("class", format!("must be below {c}")));
    }
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for r in records {
        let pred = r.scores[class] >= threshold;
        match (r.true_labels[class], pred) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let degenerate = tp + fp == 0 || tp + fneg == 0;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    Ok(ClassMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        degenerate,
    })
}
