//! Fit a diagonal mixture to random descriptors, encode a few descriptor
//! sets as Fisher vectors, then reduce them with PCA and fit a ridge
//! regressor on the reduced codes.
//!
//! ```bash
//! cargo run --release -p ildnet --example fisher_pooling
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ildnet::fvpool::{fv_encode, gmm_fit, mvregress_fit, mvregress_predict, pca_fit, pca_project, DescriptorSet, GmmOptions};

fn main() -> ildnet::Result<()> {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Two descriptor populations; each set is displaced along the first
    // axis by its own offset, which the regressor has to recover.
    let mut draw = |offset: f64, n: usize| -> Vec<f64> {
        (0..n)
            .flat_map(|_| {
                let centre = if rng.gen::<bool>() { 1.5 } else { -1.5 };
                (0..dim)
                    .map(|j| centre + rng.gen_range(-1.0..1.0) + if j == 0 { offset } else { 0.0 })
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let offsets: Vec<f64> = (0..30).map(|i| i as f64 / 29.0 - 0.5).collect();
    let sets: Vec<DescriptorSet> = offsets
        .iter()
        .map(|&s| DescriptorSet::new(dim, draw(s, 100), "demo"))
        .collect::<ildnet::Result<_>>()?;

    let pooled: Vec<f64> = sets.iter().flat_map(|s| s.vectors.iter().copied()).collect();
    let fit = gmm_fit(
        &pooled,
        dim,
        &GmmOptions {
            components: 4,
            ..Default::default()
        },
    )?;
    println!(
        "mixture: {} EM iterations, log-likelihood {:.4} -> {:.4}, weights {:.3?}",
        fit.log_likelihood.len(),
        fit.log_likelihood[0],
        fit.log_likelihood[fit.log_likelihood.len() - 1],
        fit.model.weights
    );

    let codes: Vec<Vec<f64>> = sets.iter().map(|s| fv_encode(s, &fit.model, true)).collect::<ildnet::Result<_>>()?;
    let fv_dim = codes[0].len();
    println!("{} Fisher vectors of dimension {fv_dim} (2 x 4 x {dim})", codes.len());

    let pca = pca_fit(&codes.concat(), fv_dim, 5)?;
    let reduced = pca_project(&pca, &codes.concat())?;
    let linear = mvregress_fit(&reduced, 5, &offsets, 1, 1e-3)?;
    let predicted = mvregress_predict(&linear, &reduced)?;
    for i in (0..offsets.len()).step_by(6) {
        println!("offset {:+.2} predicted {:+.3}", offsets[i], predicted[i]);
    }
    Ok(())
}
