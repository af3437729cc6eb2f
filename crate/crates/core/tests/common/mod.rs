//! Brute-force reference implementations used by the integration tests and
//! the acceptance suite. Each one deliberately takes a different route from
//! the library code it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ildnet::evalkit::PredictionRecord;
use ildnet::nn::{LayerSpec, LossSpec, Network, NetworkSpec, Shape3, Tensor};

/// Set metrics by explicit set construction per record.
pub fn set_metrics_oracle(records: &[PredictionRecord], thresholds: &[f64]) -> (f64, f64, f64, f64) {
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for r in records {
        let truth: BTreeSet<usize> = (0..r.true_labels.len()).filter(|&k| r.true_labels[k]).collect();
        let pred: BTreeSet<usize> = (0..r.scores.len()).filter(|&k| r.scores[k] >= thresholds[k]).collect();
        let inter = truth.intersection(&pred).count() as f64;
        let union = truth.union(&pred).count() as f64;
        if truth.is_empty() && pred.is_empty() {
            acc += 1.0;
            prec += 1.0;
            rec += 1.0;
            continue;
        }
        acc += inter / union;
        if !pred.is_empty() {
            prec += inter / pred.len() as f64;
        }
        if !truth.is_empty() {
            rec += inter / truth.len() as f64;
        }
    }
    let n = records.len() as f64;
    let (p, r) = (prec / n, rec / n);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (acc / n, p, r, f1)
}

/// Per-class precision, recall and F1 from a 2×2 confusion table.
pub fn confusion_oracle(records: &[PredictionRecord], class: usize, threshold: f64) -> (f64, f64, f64) {
    let mut table = [[0usize; 2]; 2];
    for r in records {
        let t = r.true_labels[class] as usize;
        let p = (r.scores[class] >= threshold) as usize;
        table[t][p] += 1;
    }
    let (tp, fp, fneg) = (table[1][1] as f64, table[0][1] as f64, table[1][0] as f64);
    let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let r = if tp + fneg == 0.0 { 0.0 } else { tp / (tp + fneg) };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by recounting every distinct threshold from scratch.
pub fn exhaustive_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let called: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = called.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / called.len() as f64;
        prev_recall = recall;
    }
    ap
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n × n` row-major matrix.
/// Returns eigenvalues in decreasing order and the matching unit
/// eigenvectors as rows.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| matrix[i * n..(i + 1) * n].to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divisor `n - 1`) by explicit double loops.
pub fn covariance(data: &[f64], d: usize) -> Vec<f64> {
    let n = data.len() / d;
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            let s: f64 = (0..n).map(|i| (data[i * d + a] - mean[a]) * (data[i * d + b] - mean[b])).sum();
            cov[a * d + b] = s / (n - 1) as f64;
        }
    }
    cov
}

/// Solve `A x = b` for a dense square system by Gaussian elimination with
/// partial pivoting. `b` may hold several right-hand sides as columns.
pub fn gauss_solve(a: &[f64], n: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.extend_from_slice(&b[i * cols..(i + 1) * cols]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n + cols {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n * cols];
    for c in 0..cols {
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k * cols + c]).sum();
            x[i * cols + c] = (m[i][n + c] - s) / m[i][i];
        }
    }
    x
}

/// Ridge weights (bias last, unpenalised) from explicitly assembled normal
/// equations.
pub fn ridge_oracle(x: &[f64], p: usize, y: &[f64], c: usize, lambda: f64) -> Vec<f64> {
    let n = x.len() / p;
    let q = p + 1;
    let aug = |i: usize, j: usize| if j == p { 1.0 } else { x[i * p + j] };
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q * c];
    for r in 0..q {
        for s in 0..q {
            a[r * q + s] = (0..n).map(|i| aug(i, r) * aug(i, s)).sum();
        }
        if r < p {
            a[r * q + r] += lambda;
        }
        for k in 0..c {
            b[r * c + k] = (0..n).map(|i| aug(i, r) * y[i * c + k]).sum();
        }
    }
    gauss_solve(&a, q, &b, c)
}

/// Every layer kind, including a strided padded convolution and an
/// overlapping pool.
pub fn mixed_spec(outputs: usize) -> NetworkSpec {
    NetworkSpec {
        input: Shape3::new(2, 7, 7),
        layers: vec![
            LayerSpec::conv(3, 2, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 3, stride: 2 },
            LayerSpec::Conv {
                kernel: 2,
                in_channels: 3,
                out_channels: 4,
                stride: 2,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::dense(4 * 2 * 2, 5),
            LayerSpec::Relu,
            LayerSpec::dense(5, outputs),
        ],
    }
}

/// Largest relative error between the analytic parameter gradient of
/// `loss(net(inputs))` and central differences with step `h`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(net: &Network, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: &LossSpec, h: f64, floor: f64) -> f64 {
    let batch = Tensor::from_rows(inputs).unwrap();
    let y = Tensor::from_rows(targets).unwrap();
    let (out, cache) = net.forward(&batch).unwrap();
    let (_, grad_out) = loss.evaluate(&out, &y).unwrap();
    let analytic: Vec<f64> = net.backward(&cache, &grad_out).unwrap().iter().collect();
    let base = net.flat_params();
    let eval = |params: &[f64]| {
        let mut probe = net.clone();
        probe.set_flat_params(params).unwrap();
        let (out, _) = probe.forward(&batch).unwrap();
        loss.evaluate(&out, &y).unwrap().0
    };
    let mut worst: f64 = 0.0;
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + h;
        let up = eval(&params);
        params[i] = base[i] - h;
        let down = eval(&params);
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Deterministic uniform values in `[-1, 1)` from a 64-bit LCG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (((self.next() + 1.0) / 2.0) * n as f64) as usize % n
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}
