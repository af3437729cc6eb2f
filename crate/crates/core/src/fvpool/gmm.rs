//! Diagonal-covariance Gaussian mixture fitted by expectation maximisation.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng;

/// Rows processed per parallel work unit; partial sums are combined in chunk order.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub dim: usize,
    /// `M × D`, row-major.
    pub means: Vec<f64>,
    /// `M × D`, row-major.
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub components: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Lower bound on every variance, relative to the largest per-dimension data variance.
    pub variance_floor: f64,
    /// At most this many rows (uniformly sampled) are used for fitting.
    pub subsample_cap: usize,
    /// Rows used by the seeding step.
    pub seeding_sample: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 32,
            max_iters: 100,
            rel_tol: 1e-6,
            variance_floor: 1e-4,
            subsample_cap: 200_000,
            seeding_sample: 10_000,
            kmeans_iters: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the fitting rows before each M-step.
    pub log_likelihood: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn variance(&self, m: usize) -> &[f64] {
        &self.variances[m * self.dim..(m + 1) * self.dim]
    }

    /// Per-component log normalisers `log pi_m - 0.5 * sum_d log(2 pi var)`.
    pub(super) fn log_norms(&self) -> Vec<f64> {
        (0..self.components())
            .map(|m| {
                self.weights[m].ln()
                    - 0.5 * self.variance(m).iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect()
    }

    /// Writes `log(pi_m N(x | m))` into `out` and returns the log-sum.
    fn joint_log(&self, x: &[f64], norms: &[f64], out: &mut [f64]) -> f64 {
        for (m, o) in out.iter_mut().enumerate() {
            let mu = self.mean(m);
            let var = self.variance(m);
            let mut q = 0.0;
            for d in 0..self.dim {
                let t = x[d] - mu[d];
                q += t * t / var[d];
            }
            *o = norms[m] - 0.5 * q;
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    /// Posterior responsibilities of each component for `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let norms = self.log_norms();
        let mut r = vec![0.0; self.components()];
        self.posteriors_into(x, &norms, &mut r);
        r
    }

    pub(super) fn posteriors_into(&self, x: &[f64], norms: &[f64], out: &mut [f64]) -> f64 {
        let lse = self.joint_log(x, norms, out);
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
            s += *v;
        }
        out.iter_mut().for_each(|v| *v /= s);
        lse
    }

    /// Mean log-likelihood per row.
    pub fn mean_log_likelihood(&self, data: &[f64]) -> f64 {
        let norms = self.log_norms();
        let mut buf = vec![0.0; self.components()];
        let n = data.len() / self.dim;
        data.chunks_exact(self.dim)
            .map(|x| self.joint_log(x, &norms, &mut buf))
            .sum::<f64>()
            / n as f64
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.dim == 0 || self.means.len() != m * self.dim || self.variances.len() != m * self.dim {
            return Err(Error::Shape("inconsistent mixture dimensions".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Data("mixture weights must be positive and sum to 1".into()));
        }
        if self.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Data("variances must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            "gmm",
            serde_json::json!({ "dim": self.dim, "components": self.components() }),
        );
        self.append_blocks(&mut c, "");
        c
    }

    pub fn append_blocks(&self, c: &mut Container, prefix: &str) {
        c.push(format!("{prefix}gmm.means"), self.means.clone());
        c.push(format!("{prefix}gmm.variances"), self.variances.clone());
        c.push(format!("{prefix}gmm.weights"), self.weights.clone());
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("gmm")?;
        Self::from_blocks(c.field("dim")?, c, "")
    }

    pub fn from_blocks(dim: usize, c: &Container, prefix: &str) -> Result<Self> {
        let model = Self {
            dim,
            means: c.block(&format!("{prefix}gmm.means"))?.to_vec(),
            variances: c.block(&format!("{prefix}gmm.variances"))?.to_vec(),
            weights: c.block(&format!("{prefix}gmm.weights"))?.to_vec(),
        };
        model.validate()?;
        Ok(model)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fit an `M`-component mixture to `data` (`n × dim`, row-major).
///
/// Seeding is k-means++ on a subsample followed by Lloyd iterations; EM then
/// runs until the relative log-likelihood gain drops below `rel_tol` or
/// `max_iters` is reached.
pub fn gmm_fit(data: &[f64], dim: usize, opts: &GmmOptions) -> Result<GmmFit> {
    let m = opts.components;
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values are not rows of dimension {dim}", data.len())));
    }
    if m == 0 {
        return Err(Error::param("components", "must be >= 1"));
    }
    let n_all = data.len() / dim;
    if n_all < m {
        return Err(Error::Data(format!("{n_all} descriptors for {m} mixture components")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("descriptors contain non-finite values".into()));
    }
    let mut rng = rng::stream(opts.seed, "gmm");

    // Uniform subsample of rows, kept in original order.
    let rows: Vec<f64> = if n_all > opts.subsample_cap.max(m) {
        let mut idx = sample(&mut rng, n_all, opts.subsample_cap.max(m)).into_vec();
        idx.sort_unstable();
        idx.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied()).collect()
    } else {
        data.to_vec()
    };
    let n = rows.len() / dim;

    // Variance floor relative to the data spread.
    let mut mean = vec![0.0; dim];
    for x in rows.chunks_exact(dim) {
        mean.iter_mut().zip(x).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut spread = vec![0.0; dim];
    for x in rows.chunks_exact(dim) {
        for d in 0..dim {
            spread[d] += (x[d] - mean[d]).powi(2);
        }
    }
    let max_var = spread.iter().map(|s| s / n as f64).fold(0.0, f64::max);
    let floor = (opts.variance_floor * max_var).max(1e-12);

    let mut warnings = Vec::new();
    let mut model = seed_model(&rows, dim, m, opts, floor, &mut rng, &mut warnings);

    let mut history: Vec<f64> = Vec::new();
    for _ in 0..opts.max_iters {
        let stats = expectation(&model, &rows);
        let ll = stats.log_likelihood;
        if let Some(&prev) = history.last() {
            history.push(ll);
            if (ll - prev) <= opts.rel_tol * prev.abs() {
                break;
            }
        } else {
            history.push(ll);
        }
        maximisation(&mut model, &stats, n, floor, &mut warnings);
    }
    // Log-likelihood of the returned parameters.
    let final_ll = expectation(&model, &rows).log_likelihood;
    if history.last() != Some(&final_ll) {
        history.push(final_ll);
    }
    Ok(GmmFit {
        model,
        log_likelihood: history,
        warnings,
    })
}

struct Moments {
    log_likelihood: f64,
    /// Per component: soft count, first and second moments.
    resp: Vec<f64>,
    sum_x: Vec<f64>,
    sum_xx: Vec<f64>,
}

impl Moments {
    fn zeros(m: usize, dim: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            resp: vec![0.0; m],
            sum_x: vec![0.0; m * dim],
            sum_xx: vec![0.0; m * dim],
        }
    }

    fn add(&mut self, o: &Moments) {
        self.log_likelihood += o.log_likelihood;
        self.resp.iter_mut().zip(&o.resp).for_each(|(a, b)| *a += b);
        self.sum_x.iter_mut().zip(&o.sum_x).for_each(|(a, b)| *a += b);
        self.sum_xx.iter_mut().zip(&o.sum_xx).for_each(|(a, b)| *a += b);
    }
}

fn expectation(model: &GmmModel, rows: &[f64]) -> Moments {
    let (m, dim) = (model.components(), model.dim);
    let norms = model.log_norms();
    let parts: Vec<Moments> = rows
        .par_chunks(CHUNK * dim)
        .map(|chunk| {
            let mut acc = Moments::zeros(m, dim);
            let mut g = vec![0.0; m];
            for x in chunk.chunks_exact(dim) {
                acc.log_likelihood += model.posteriors_into(x, &norms, &mut g);
                for (k, &gk) in g.iter().enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    acc.resp[k] += gk;
                    let sx = &mut acc.sum_x[k * dim..(k + 1) * dim];
                    let sxx = &mut acc.sum_xx[k * dim..(k + 1) * dim];
                    for d in 0..dim {
                        sx[d] += gk * x[d];
                        sxx[d] += gk * x[d] * x[d];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Moments::zeros(m, dim);
    for p in &parts {
        total.add(p);
    }
    total
}

fn maximisation(model: &mut GmmModel, s: &Moments, n: usize, floor: f64, warnings: &mut Vec<String>) {
    let dim = model.dim;
    let min_weight = 1e-12;
    for k in 0..model.components() {
        let r = s.resp[k];
        if r < 1e-10 * n as f64 {
            // Collapsed: keep the mean, widen to the floor-protected previous
            // variances and keep a tiny weight.
            warnings.push(format!("component {k} collapsed (soft count {r:.3e})"));
            model.weights[k] = min_weight;
            continue;
        }
        model.weights[k] = r / n as f64;
        for d in 0..dim {
            let mu = s.sum_x[k * dim + d] / r;
            let var = s.sum_xx[k * dim + d] / r - mu * mu;
            model.means[k * dim + d] = mu;
            if var < floor {
                model.variances[k * dim + d] = floor;
            } else {
                model.variances[k * dim + d] = var;
            }
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

fn seed_model(
    rows: &[f64],
    dim: usize,
    m: usize,
    opts: &GmmOptions,
    floor: f64,
    rng: &mut rng::Rng,
    warnings: &mut Vec<String>,
) -> GmmModel {
    let n = rows.len() / dim;
    let pool: Vec<usize> = if n > opts.seeding_sample.max(m) {
        let mut idx = sample(rng, n, opts.seeding_sample.max(m)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];

    // k-means++ seeding.
    let mut centres: Vec<f64> = Vec::with_capacity(m * dim);
    centres.extend_from_slice(row(pool[rng.gen_range(0..pool.len())]));
    let mut best: Vec<f64> = pool.iter().map(|&i| sq_dist(row(i), &centres[..dim])).collect();
    for _ in 1..m {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (j, &b) in best.iter().enumerate() {
                if t < b {
                    chosen = j;
                    break;
                }
                t -= b;
            }
            chosen
        } else {
            rng.gen_range(0..pool.len())
        };
        let c = row(pool[pick]).to_vec();
        for (j, &i) in pool.iter().enumerate() {
            best[j] = best[j].min(sq_dist(row(i), &c));
        }
        centres.extend(c);
    }

    // Lloyd iterations on the seeding pool.
    let mut assign = vec![0usize; pool.len()];
    for _ in 0..opts.kmeans_iters {
        for (j, &i) in pool.iter().enumerate() {
            let x = row(i);
            assign[j] = (0..m)
                .min_by(|&a, &b| {
                    sq_dist(x, &centres[a * dim..(a + 1) * dim])
                        .total_cmp(&sq_dist(x, &centres[b * dim..(b + 1) * dim]))
                })
                .unwrap();
        }
        let mut sums = vec![0.0; m * dim];
        let mut counts = vec![0usize; m];
        for (j, &i) in pool.iter().enumerate() {
            counts[assign[j]] += 1;
            sums[assign[j] * dim..(assign[j] + 1) * dim]
                .iter_mut()
                .zip(row(i))
                .for_each(|(a, b)| *a += b);
        }
        for k in 0..m {
            if counts[k] > 0 {
                for d in 0..dim {
                    centres[k * dim + d] = sums[k * dim + d] / counts[k] as f64;
                }
            }
        }
    }

    let mut variances = vec![0.0; m * dim];
    let mut counts = vec![0usize; m];
    for (j, &i) in pool.iter().enumerate() {
        let k = assign[j];
        counts[k] += 1;
        for d in 0..dim {
            variances[k * dim + d] += (row(i)[d] - centres[k * dim + d]).powi(2);
        }
    }
    let mut weights = vec![0.0; m];
    for k in 0..m {
        if counts[k] == 0 {
            warnings.push(format!("component {k} empty after seeding"));
        }
        let c = counts[k].max(1) as f64;
        for d in 0..dim {
            variances[k * dim + d] = (variances[k * dim + d] / c).max(floor);
        }
        weights[k] = (counts[k] as f64 + 1.0) / (pool.len() + m) as f64;
    }
    GmmModel {
        dim,
        means: centres,
        variances,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_clusters(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, "test");
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut data = Vec::with_capacity(n * 2);
        for i in 0..n {
            let (cx, cy) = if i % 2 == 0 { (-2.0, 1.0) } else { (3.0, -1.5) };
            data.push(cx + noise.sample(&mut r));
            data.push(cy + noise.sample(&mut r));
        }
        data
    }

    #[test]
    fn recovers_two_clusters() {
        let data = two_clusters(4000, 1);
        let fit = gmm_fit(&data, 2, &GmmOptions { components: 2, ..Default::default() }).unwrap();
        let mut means: Vec<Vec<f64>> = (0..2).map(|m| fit.model.mean(m).to_vec()).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (got, want) in means.iter().zip([[-2.0, 1.0], [3.0, -1.5]]) {
            for d in 0..2 {
                assert!((got[d] - want[d]).abs() < 0.05, "{got:?} vs {want:?}");
            }
        }
        fit.model.validate().unwrap();
    }

    #[test]
    fn responsibilities_normalised() {
        let data = two_clusters(500, 2);
        let fit = gmm_fit(&data, 2, &GmmOptions { components: 3, ..Default::default() }).unwrap();
        for x in data.chunks_exact(2) {
            let r = fit.model.responsibilities(x);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let data = two_clusters(1000, 3);
        let fit = gmm_fit(&data, 2, &GmmOptions { components: 4, ..Default::default() }).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let data = two_clusters(300, 4);
        let opts = GmmOptions { components: 3, seed: 9, ..Default::default() };
        let a = gmm_fit(&data, 2, &opts).unwrap();
        let b = gmm_fit(&data, 2, &opts).unwrap();
        assert_eq!(a.model, b.model);
        assert!(matches!(
            gmm_fit(&data[..4], 2, &GmmOptions { components: 3, ..Default::default() }),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn duplicate_points_hit_the_floor() {
        let mut data = vec![1.0; 200];
        data.extend((0..200).map(|i| (i % 7) as f64));
        let fit = gmm_fit(&data, 2, &GmmOptions { components: 3, ..Default::default() }).unwrap();
        assert!(fit.model.variances.iter().all(|&v| v > 0.0));
        fit.model.validate().unwrap();
    }

    #[test]
    fn container_roundtrip() {
        let data = two_clusters(200, 5);
        let model = gmm_fit(&data, 2, &GmmOptions { components: 2, ..Default::default() }).unwrap().model;
        let back = GmmModel::from_container(&Container::from_bytes(&model.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
