//! Fisher-vector encoding of a descriptor set against a fitted mixture.

use super::descriptors::DescriptorSet;
use super::gmm::GmmModel;
use crate::error::{Error, Result};

/// Encode `descriptors` as a `2·M·D` vector: for each component the
/// normalised first-order deviations, then for each component the
/// second-order deviations.
///
/// Descriptors are accumulated in lexicographic order, so the output does not
/// depend on how the input rows are arranged. With `improved`, a signed square
/// root and L2 normalisation are applied.
pub fn fv_encode(descriptors: &DescriptorSet, gmm: &GmmModel, improved: bool) -> Result<Vec<f64>> {
    let d = gmm.dim;
    if descriptors.dim != d {
        return Err(Error::Shape(format!(
            "descriptors of dimension {} against a mixture of dimension {d}",
            descriptors.dim
        )));
    }
    let m = gmm.components();
    let n = descriptors.count();
    let mut rows: Vec<&[f64]> = descriptors.iter().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut first = vec![0.0; m * d];
    let mut second = vec![0.0; m * d];
    let std: Vec<f64> = gmm.variances.iter().map(|v| v.sqrt()).collect();
    let norms = gmm.log_norms();
    let mut gamma = vec![0.0; m];
    for x in rows {
        gmm.posteriors_into(x, &norms, &mut gamma);
        for (k, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let mu = gmm.mean(k);
            for j in 0..d {
                let z = (x[j] - mu[j]) / std[k * d + j];
                first[k * d + j] += g * z;
                second[k * d + j] += g * (z * z - 1.0);
            }
        }
    }
    for k in 0..m {
        let w = gmm.weights[k];
        let a = 1.0 / (n as f64 * w.sqrt());
        let b = 1.0 / (n as f64 * (2.0 * w).sqrt());
        first[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= a);
        second[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= b);
    }
    first.extend(second);
    if improved {
        improve(&mut first);
    }
    Ok(first)
}

/// Signed square root followed by L2 normalisation (a zero vector stays zero).
pub fn improve(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().sqrt();
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_gmm() -> GmmModel {
        GmmModel {
            dim: 2,
            means: vec![0.0, 0.0, 2.0, 1.0],
            variances: vec![1.0, 0.5, 0.8, 2.0],
            weights: vec![0.4, 0.6],
        }
    }

    #[test]
    fn single_component_matches_closed_form() {
        let gmm = GmmModel {
            dim: 1,
            means: vec![1.0],
            variances: vec![4.0],
            weights: vec![1.0],
        };
        let set = DescriptorSet::new(1, vec![3.0, -1.0, 5.0], "t").unwrap();
        let fv = fv_encode(&set, &gmm, false).unwrap();
        // z = 1, -1, 2
        assert!((fv[0] - (1.0 - 1.0 + 2.0) / 3.0).abs() < 1e-15);
        let v = ((1.0 - 1.0) + (1.0 - 1.0) + (4.0 - 1.0)) / (3.0 * 2f64.sqrt());
        assert!((fv[1] - v).abs() < 1e-15);
    }

    #[test]
    fn permutation_is_bit_identical() {
        let gmm = toy_gmm();
        let rows: Vec<f64> = (0..40).map(|i| ((i * 37 % 17) as f64 * 0.3).sin() * 2.0).collect();
        let a = DescriptorSet::new(2, rows.clone(), "t").unwrap();
        let mut pairs: Vec<[f64; 2]> = rows.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        pairs.reverse();
        pairs.swap(3, 11);
        let b = DescriptorSet::new(2, pairs.concat(), "t").unwrap();
        let fa = fv_encode(&a, &gmm, true).unwrap();
        let fb = fv_encode(&b, &gmm, true).unwrap();
        assert_eq!(fa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), fb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn improved_has_unit_norm_and_dimension() {
        let gmm = toy_gmm();
        let set = DescriptorSet::new(2, vec![0.3, -0.2, 1.9, 1.4, 0.0, 2.0], "t").unwrap();
        let fv = fv_encode(&set, &gmm, true).unwrap();
        assert_eq!(fv.len(), 2 * 2 * 2);
        assert!((fv.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            fv_encode(&DescriptorSet::new(3, vec![0.0; 3], "t").unwrap(), &gmm, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn improve_keeps_zero() {
        let mut v = vec![0.0; 4];
        improve(&mut v);
        assert_eq!(v, vec![0.0; 4]);
    }
}
