use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operating point: scores at or above `threshold` are called positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Cumulative positive and negative counts after each group of tied scores,
/// visiting scores from highest to lowest.
fn sweep(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, usize, usize)>, usize, usize)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, tp, fp));
    }
    Ok((steps, tp, fp))
}

/// ROC curve (false positive rate, true positive rate) and its area by the
/// trapezoidal rule. Tied scores form one step, so the area equals the
/// Mann-Whitney statistic with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<CurvePoint>, f64)> {
    let (steps, pos, neg) = sweep(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("{pos} positive and {neg} negative labels")));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (s, tp, fp) in steps {
        // Trapezoid in count units, normalised once at the end.
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        points.push(CurvePoint {
            threshold: s,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    Ok((points, area / (pos as f64 * neg as f64)))
}

/// Precision-recall curve (recall, precision) and average precision
/// `Σ (R_k − R_{k−1}) · P_k` over the tie groups.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<(Vec<CurvePoint>, f64)> {
    let (steps, pos, _) = sweep(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedAuc("no positive labels".into()));
    }
    let mut points = Vec::with_capacity(steps.len());
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (s, tp, fp) in steps {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold: s,
            x: recall,
            y: precision,
        });
    }
    Ok((points, ap))
}
