//! Multivariate ridge regression with an unpenalised bias.

use nalgebra::{Cholesky, DMatrix};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::gemm;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub inputs: usize,
    pub outputs: usize,
    /// `(inputs + 1) × outputs`, row-major; the last row is the bias.
    pub weights: Vec<f64>,
}

/// Minimise `‖Y − [X, 1]·W‖² + λ‖W_{0..p}‖²` through the normal equations.
///
/// `features` is `n × p` and `targets` is `n × c`, both row-major.
pub fn mvregress_fit(features: &[f64], p: usize, targets: &[f64], c: usize, lambda: f64) -> Result<LinearModel> {
    if p == 0 || c == 0 || features.len() % p != 0 || targets.len() % c != 0 {
        return Err(Error::Shape("features or targets are not whole rows".into()));
    }
    let n = features.len() / p;
    if targets.len() / c != n || n == 0 {
        return Err(Error::Shape(format!("{n} feature rows but {} target rows", targets.len() / c)));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("ridge", "must be finite and >= 0"));
    }
    if features.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Data("regression inputs contain non-finite values".into()));
    }
    let q = p + 1;
    let augmented: Vec<f64> = features
        .chunks_exact(p)
        .flat_map(|row| row.iter().copied().chain(std::iter::once(1.0)))
        .collect();
    let mut gram = vec![0.0; q * q];
    gemm(q, n, q, &augmented, true, &augmented, false, 0.0, &mut gram);
    for i in 0..p {
        gram[i * q + i] += lambda;
    }
    let mut rhs = vec![0.0; q * c];
    gemm(q, n, c, &augmented, true, targets, false, 0.0, &mut rhs);

    let a = DMatrix::from_row_slice(q, q, &gram);
    let scale = (0..q).map(|i| gram[i * q + i]).fold(0.0, f64::max);
    let singular = || Error::Solver(format!("normal equations are singular at ridge {lambda}; use a ridge > 0"));
    let chol = Cholesky::new(a).ok_or_else(singular)?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-12 * scale) {
        return Err(singular());
    }
    let solution = chol.solve(&DMatrix::from_row_slice(q, c, &rhs));
    let mut weights = vec![0.0; q * c];
    for i in 0..q {
        for j in 0..c {
            weights[i * c + j] = solution[(i, j)];
        }
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(singular());
    }
    Ok(LinearModel {
        inputs: p,
        outputs: c,
        weights,
    })
}

/// Scores `[X, 1]·W`, `n × c` row-major.
pub fn mvregress_predict(model: &LinearModel, features: &[f64]) -> Result<Vec<f64>> {
    let p = model.inputs;
    if features.len() % p != 0 {
        return Err(Error::Shape(format!("{} values are not rows of dimension {p}", features.len())));
    }
    let n = features.len() / p;
    let c = model.outputs;
    let mut out = Vec::with_capacity(n * c);
    for _ in 0..n {
        out.extend_from_slice(&model.weights[p * c..]);
    }
    if n > 0 {
        gemm(n, p, c, features, false, &model.weights[..p * c], false, 1.0, &mut out);
    }
    Ok(out)
}

impl LinearModel {
    pub fn append_blocks(&self, c: &mut Container, prefix: &str) {
        c.push(format!("{prefix}linear.weights"), self.weights.clone());
    }

    pub fn from_blocks(inputs: usize, outputs: usize, c: &Container, prefix: &str) -> Result<Self> {
        let weights = c.block(&format!("{prefix}linear.weights"))?.to_vec();
        if weights.len() != (inputs + 1) * outputs {
            return Err(Error::Data("linear weights do not match the declared dimensions".into()));
        }
        Ok(Self { inputs, outputs, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn affine_targets_are_fit_exactly() {
        let mut r = crate::rng::stream(1, "test");
        let x: Vec<f64> = (0..40 * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .chunks_exact(3)
            .flat_map(|v| [2.0 * v[0] - v[2] + 0.5, v[1] * 3.0 - 1.0])
            .collect();
        let m = mvregress_fit(&x, 3, &y, 2, 0.0).unwrap();
        let pred = mvregress_predict(&m, &x).unwrap();
        let resid: f64 = pred.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(resid < 1e-8, "{resid}");
        assert!((m.weights[3 * 2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn huge_ridge_predicts_column_means() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let m = mvregress_fit(&x, 1, &y, 1, 1e12).unwrap();
        let mean = y.iter().sum::<f64>() / 20.0;
        assert!(m.weights[0].abs() < 1e-9);
        for v in mvregress_predict(&m, &x).unwrap() {
            assert!((v - mean).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_system_needs_ridge() {
        // Duplicate column.
        let x: Vec<f64> = (0..10).flat_map(|i| [i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(mvregress_fit(&x, 2, &y, 1, 0.0), Err(Error::Solver(_))));
        assert!(mvregress_fit(&x, 2, &y, 1, 1e-3).is_ok());
    }
}
