//! Principal component analysis of row vectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::gemm;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    /// `input_dim × output_dim`, row-major; columns are orthonormal directions
    /// sorted by decreasing variance.
    pub basis: Vec<f64>,
    /// Variance captured by each column.
    pub variances: Vec<f64>,
}

/// Fit the top-`p` principal directions of `data` (`n × d`, row-major).
///
/// Works on the `d × d` covariance when `d <= n` and on the `n × n` Gram
/// matrix otherwise. Each direction is signed so its largest-magnitude entry
/// is positive.
pub fn pca_fit(data: &[f64], d: usize, p: usize) -> Result<PcaModel> {
    if d == 0 || data.len() % d != 0 {
        return Err(Error::Shape(format!("{} values are not rows of dimension {d}", data.len())));
    }
    let n = data.len() / d;
    if n < 2 {
        return Err(Error::Data(format!("PCA needs at least 2 rows, got {n}")));
    }
    if p == 0 || p > (n - 1).min(d) {
        return Err(Error::param(
            "pca_dim",
            format!("must lie in 1..={} for {n} rows of dimension {d}", (n - 1).min(d)),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("PCA input contains non-finite values".into()));
    }
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<f64> = data
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let scale = 1.0 / (n - 1) as f64;

    let mut basis = vec![0.0; d * p];
    let mut variances = vec![0.0; p];
    if d <= n {
        // Covariance Xᵀ X / (n-1).
        let mut cov = vec![0.0; d * d];
        gemm(d, n, d, &centred, true, &centred, false, 0.0, &mut cov);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov).scale(scale));
        for (j, k) in descending(&eig.eigenvalues.as_slice()[..]).into_iter().take(p).enumerate() {
            variances[j] = eig.eigenvalues[k].max(0.0);
            for i in 0..d {
                basis[i * p + j] = eig.eigenvectors[(i, k)];
            }
        }
    } else {
        // Gram X Xᵀ / (n-1); direction = Xᵀ u / sqrt((n-1) λ).
        let mut gram = vec![0.0; n * n];
        gemm(n, d, n, &centred, false, &centred, true, 0.0, &mut gram);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &gram).scale(scale));
        for (j, k) in descending(&eig.eigenvalues.as_slice()[..]).into_iter().take(p).enumerate() {
            let lambda = eig.eigenvalues[k];
            if !(lambda > 0.0) {
                return Err(Error::param(
                    "pca_dim",
                    format!("data has rank below {p}; at most {j} directions carry variance"),
                ));
            }
            variances[j] = lambda;
            for (r, row) in centred.chunks_exact(d).enumerate() {
                let u = eig.eigenvectors[(r, k)];
                for i in 0..d {
                    basis[i * p + j] += u * row[i];
                }
            }
        }
        orthonormalise(&mut basis, d, p);
    }
    for j in 0..p {
        let pivot = (0..d)
            .map(|i| basis[i * p + j])
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            (0..d).for_each(|i| basis[i * p + j] = -basis[i * p + j]);
        }
    }
    Ok(PcaModel {
        input_dim: d,
        output_dim: p,
        mean,
        basis,
        variances,
    })
}

/// Indices sorting `values` from largest to smallest (ties by index).
fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Modified Gram-Schmidt on the columns of a `d × p` row-major matrix, run twice.
fn orthonormalise(basis: &mut [f64], d: usize, p: usize) {
    for _ in 0..2 {
        for j in 0..p {
            for k in 0..j {
                let dot: f64 = (0..d).map(|i| basis[i * p + j] * basis[i * p + k]).sum();
                (0..d).for_each(|i| basis[i * p + j] -= dot * basis[i * p + k]);
            }
            let norm = (0..d).map(|i| basis[i * p + j].powi(2)).sum::<f64>().sqrt();
            (0..d).for_each(|i| basis[i * p + j] /= norm);
        }
    }
}

/// Centred rows times the basis: `n × p`, row-major.
pub fn pca_project(model: &PcaModel, data: &[f64]) -> Result<Vec<f64>> {
    let d = model.input_dim;
    if data.len() % d != 0 {
        return Err(Error::Shape(format!("{} values are not rows of dimension {d}", data.len())));
    }
    let n = data.len() / d;
    let centred: Vec<f64> = data
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&model.mean).map(|(x, m)| x - m))
        .collect();
    let mut out = vec![0.0; n * model.output_dim];
    if n > 0 {
        gemm(n, d, model.output_dim, &centred, false, &model.basis, false, 0.0, &mut out);
    }
    Ok(out)
}

impl PcaModel {
    pub fn append_blocks(&self, c: &mut Container, prefix: &str) {
        c.push(format!("{prefix}pca.mean"), self.mean.clone());
        c.push(format!("{prefix}pca.basis"), self.basis.clone());
        c.push(format!("{prefix}pca.variances"), self.variances.clone());
    }

    pub fn from_blocks(input_dim: usize, output_dim: usize, c: &Container, prefix: &str) -> Result<Self> {
        let model = Self {
            input_dim,
            output_dim,
            mean: c.block(&format!("{prefix}pca.mean"))?.to_vec(),
            basis: c.block(&format!("{prefix}pca.basis"))?.to_vec(),
            variances: c.block(&format!("{prefix}pca.variances"))?.to_vec(),
        };
        if model.mean.len() != input_dim
            || model.basis.len() != input_dim * output_dim
            || model.variances.len() != output_dim
        {
            return Err(Error::Data("PCA blocks do not match the declared dimensions".into()));
        }
        Ok(model)
    }
}
