//! Loss heads: multi-label logistic, L2 and smooth-L1 regression (all
//! optionally class-weighted) and softmax cross-entropy for single-label
//! patch training.
//!
//! Every head returns the batch-mean loss and its gradient with respect to
//! the raw network scores.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossHead {
    MultilabelLogistic,
    RegressionL2,
    RegressionSmoothL1,
}

impl LossHead {
    /// Parse the short names `mlc`, `l2`, `sl1`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "mlc" => Ok(LossHead::MultilabelLogistic),
            "l2" => Ok(LossHead::RegressionL2),
            "sl1" => Ok(LossHead::RegressionSmoothL1),
            other => Err(Error::Usage(format!("unknown head `{other}`; expected mlc | l2 | sl1"))),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            LossHead::MultilabelLogistic => "mlc",
            LossHead::RegressionL2 => "l2",
            LossHead::RegressionSmoothL1 => "sl1",
        }
    }

    pub fn regression_kind(&self) -> Option<RegressionKind> {
        match self {
            LossHead::MultilabelLogistic => None,
            LossHead::RegressionL2 => Some(RegressionKind::L2),
            LossHead::RegressionSmoothL1 => Some(RegressionKind::SmoothL1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    L2,
    SmoothL1,
}

/// Loss head plus per-class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub head: LossHead,
    pub class_weights: Vec<f64>,
}

impl LossSpec {
    /// Unweighted head over `classes` outputs.
    pub fn new(head: LossHead, classes: usize) -> Self {
        Self {
            head,
            class_weights: vec![1.0; classes],
        }
    }

    pub fn balanced(head: LossHead, stats: &ClassStats) -> Result<Self> {
        Ok(Self {
            head,
            class_weights: class_balance_weights(stats, stats.positives.len())?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_weights.is_empty() || self.class_weights.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::param("class_weights", "every weight must be finite and > 0"));
        }
        Ok(())
    }

    /// Evaluate on raw scores `f` against targets `y` (both `batch × C`).
    ///
    /// For the logistic head `y` holds `±1`; for the regression heads it holds
    /// real-valued targets.
    pub fn evaluate(&self, f: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
        match self.head.regression_kind() {
            None => loss_multilabel_logistic(f, y, &self.class_weights),
            Some(kind) => loss_regression(f, y, kind, &self.class_weights),
        }
    }
}

/// Positive-instance counts per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub positives: Vec<u64>,
}

impl ClassStats {
    pub fn new(positives: Vec<u64>) -> Self {
        Self { positives }
    }

    /// Count positives (`> 0.5`) in binary label rows.
    pub fn from_labels<R: AsRef<[f64]>>(rows: &[R], classes: usize) -> Self {
        let mut positives = vec![0u64; classes];
        for r in rows {
            for (p, &v) in positives.iter_mut().zip(r.as_ref()) {
                if v > 0.5 {
                    *p += 1;
                }
            }
        }
        Self { positives }
    }

    pub fn total(&self) -> u64 {
        self.positives.iter().sum()
    }
}

/// `beta_k = (1 - |Y_k| / |Y|) / C`.
pub fn class_balance_weights(stats: &ClassStats, classes: usize) -> Result<Vec<f64>> {
    if stats.positives.len() != classes {
        return Err(Error::Statistics(format!(
            "{} class counts for {classes} classes",
            stats.positives.len()
        )));
    }
    let total = stats.total();
    if total == 0 {
        return Err(Error::Statistics("no positive instances in any class".into()));
    }
    Ok(stats
        .positives
        .iter()
        .map(|&p| (total - p) as f64 / (total as f64 * classes as f64))
        .collect())
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
pub fn softplus_neg(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(z))`, i.e. the logistic of `-z`.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_derivative(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn check_pair(f: &Tensor, y: &Tensor, beta: &[f64]) -> Result<(usize, usize)> {
    if f.shape() != y.shape() || f.shape().len() != 2 {
        return Err(Error::Shape(format!("scores {:?} vs targets {:?}", f.shape(), y.shape())));
    }
    let (n, c) = (f.shape()[0], f.shape()[1]);
    if beta.len() != c {
        return Err(Error::Shape(format!("{} class weights for {c} outputs", beta.len())));
    }
    Ok((n, c))
}

/// Mean over the batch of `sum_k beta_k * log(1 + exp(-y_k f_k))`, `y_k = ±1`.
pub fn loss_multilabel_logistic(f: &Tensor, y: &Tensor, beta: &[f64]) -> Result<(f64, Tensor)> {
    let (n, c) = check_pair(f, y, beta)?;
    if let Some(bad) = y.data().iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Label(format!("logistic targets must be -1 or +1, got {bad}")));
    }
    let mut grad = Tensor::zeros(&[n, c])?;
    let mut loss = 0.0;
    for i in 0..n {
        let (fr, yr) = (f.row(i), y.row(i));
        let gr = grad.row_mut(i);
        for k in 0..c {
            let z = yr[k] * fr[k];
            loss += beta[k] * softplus_neg(z);
            gr[k] = -beta[k] * yr[k] * sigmoid_neg(z) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean over the batch of `sum_k beta_k * L(y_k - f_k)`.
pub fn loss_regression(f: &Tensor, y: &Tensor, kind: RegressionKind, beta: &[f64]) -> Result<(f64, Tensor)> {
    let (n, c) = check_pair(f, y, beta)?;
    if let Some(bad) = y.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Label(format!("regression target {bad} is not finite")));
    }
    let mut grad = Tensor::zeros(&[n, c])?;
    let mut loss = 0.0;
    for i in 0..n {
        let (fr, yr) = (f.row(i), y.row(i));
        let gr = grad.row_mut(i);
        for k in 0..c {
            let x = yr[k] - fr[k];
            let (l, dl) = match kind {
                RegressionKind::L2 => (x * x, 2.0 * x),
                RegressionKind::SmoothL1 => (smooth_l1(x), smooth_l1_derivative(x)),
            };
            loss += beta[k] * l;
            // d/df of L(y - f) is -L'(y - f).
            gr[k] = -beta[k] * dl / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Softmax probabilities per row.
pub fn softmax_rows(f: &Tensor) -> Tensor {
    let mut out = f.clone();
    let c = f.row_len();
    for i in 0..f.batch() {
        let r = out.row_mut(i);
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        r.iter_mut().for_each(|v| *v /= s);
        debug_assert_eq!(r.len(), c);
    }
    out
}

/// Mean softmax cross-entropy against class indices.
pub fn loss_softmax_cross_entropy(f: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if f.shape().len() != 2 || f.batch() != labels.len() {
        return Err(Error::Shape(format!("scores {:?} vs {} labels", f.shape(), labels.len())));
    }
    let (n, c) = (f.batch(), f.row_len());
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label(format!("class index {bad} outside 0..{c}")));
    }
    let mut grad = softmax_rows(f);
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let r = grad.row_mut(i);
        loss -= r[l].max(f64::MIN_POSITIVE).ln();
        r[l] -= 1.0;
        r.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((loss / n as f64, grad))
}
