//! Orderless pooling of network activations: descriptors, mixture model,
//! Fisher-vector encoding, PCA and a linear regressor on top.

mod descriptors;
mod fisher;
mod gmm;
mod linreg;
mod pca;

pub use descriptors::{descriptor_layer, extract_descriptors, DescriptorSet};
pub use fisher::{fv_encode, improve};
pub use gmm::{gmm_fit, GmmFit, GmmModel, GmmOptions};
pub use linreg::{mvregress_fit, mvregress_predict, LinearModel};
pub use pca::{pca_fit, pca_project, PcaModel};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvOptions {
    /// Layer whose output provides the descriptors, e.g. `conv1`.
    pub layer: String,
    pub gmm: GmmOptions,
    pub pca_dim: usize,
    pub improved: bool,
    pub ridge: f64,
}

impl Default for FvOptions {
    fn default() -> Self {
        Self {
            layer: "conv3".into(),
            gmm: GmmOptions::default(),
            pca_dim: 512,
            improved: true,
            ridge: 1e-3,
        }
    }
}

/// A network truncated at a descriptor layer, followed by the fitted encoder
/// and regressor.
#[derive(Debug, Clone)]
pub struct FvPipeline {
    pub network: Network,
    pub layer: String,
    pub improved: bool,
    pub gmm: GmmModel,
    pub pca: PcaModel,
    pub linear: LinearModel,
}

/// Descriptors of every input at `layer`, computed in parallel and returned in input order.
pub fn describe_all(net: &Network, inputs: &[Vec<f64>], layer: &str) -> Result<Vec<DescriptorSet>> {
    descriptor_layer(net.spec(), layer)?;
    inputs
        .par_iter()
        .map(|x| extract_descriptors(net.spec(), &net.activations(x)?, layer))
        .collect()
}

/// Fisher vectors of many descriptor sets, in order, as one `n × 2MD` matrix.
pub fn encode_all(sets: &[DescriptorSet], gmm: &GmmModel, improved: bool) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = sets.par_iter().map(|s| fv_encode(s, gmm, improved)).collect::<Result<_>>()?;
    Ok(rows.concat())
}

impl FvPipeline {
    /// Fit the mixture on a seeded subsample of training descriptors, then PCA
    /// and the ridge regressor on the encoded training images.
    pub fn fit(network: Network, inputs: &[Vec<f64>], targets: &[Vec<f64>], opts: &FvOptions) -> Result<(Self, GmmFit)> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Data(format!("{} inputs with {} target rows", inputs.len(), targets.len())));
        }
        let c = targets[0].len();
        if c == 0 || targets.iter().any(|t| t.len() != c) {
            return Err(Error::Shape("target rows must share one non-zero length".into()));
        }
        let sets = describe_all(&network, inputs, &opts.layer)?;
        let dim = sets[0].dim;

        // Even share of the subsample budget per image.
        let per_image = opts.gmm.subsample_cap.div_ceil(sets.len()).max(1);
        let mut pick = rng::stream(opts.gmm.seed, "gmm-pool");
        let mut pooled = Vec::new();
        for set in &sets {
            if set.count() <= per_image {
                pooled.extend_from_slice(&set.vectors);
            } else {
                let mut idx = sample(&mut pick, set.count(), per_image).into_vec();
                idx.sort_unstable();
                idx.iter().for_each(|&i| pooled.extend_from_slice(set.get(i)));
            }
        }
        let fit = gmm_fit(&pooled, dim, &opts.gmm)?;
        drop(pooled);

        let fv_dim = 2 * fit.model.components() * dim;
        let encoded = encode_all(&sets, &fit.model, opts.improved)?;
        let pca = pca_fit(&encoded, fv_dim, opts.pca_dim)?;
        let reduced = pca_project(&pca, &encoded)?;
        let linear = mvregress_fit(&reduced, pca.output_dim, &targets.concat(), c, opts.ridge)?;
        let pipeline = Self {
            network,
            layer: opts.layer.clone(),
            improved: opts.improved,
            gmm: fit.model.clone(),
            pca,
            linear,
        };
        Ok((pipeline, fit))
    }

    pub fn outputs(&self) -> usize {
        self.linear.outputs
    }

    /// One score row per input.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let sets = describe_all(&self.network, inputs, &self.layer)?;
        let encoded = encode_all(&sets, &self.gmm, self.improved)?;
        let reduced = pca_project(&self.pca, &encoded)?;
        let scores = mvregress_predict(&self.linear, &reduced)?;
        Ok(scores.chunks_exact(self.outputs()).map(|r| r.to_vec()).collect())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            "fv-pipeline",
            serde_json::json!({
                "spec": self.network.spec(),
                "layer": self.layer,
                "improved": self.improved,
                "descriptor_dim": self.gmm.dim,
                "pca_input": self.pca.input_dim,
                "pca_output": self.pca.output_dim,
                "outputs": self.linear.outputs,
            }),
        );
        self.network.append_blocks(&mut c, "net.");
        self.gmm.append_blocks(&mut c, "");
        self.pca.append_blocks(&mut c, "");
        self.linear.append_blocks(&mut c, "");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("fv-pipeline")?;
        let spec: NetworkSpec = c.field("spec")?;
        let network = Network::from_blocks(spec, c, "net.")?;
        let layer: String = c.field("layer")?;
        descriptor_layer(network.spec(), &layer)?;
        let pca_output = c.field("pca_output")?;
        Ok(Self {
            network,
            layer,
            improved: c.field("improved")?,
            gmm: GmmModel::from_blocks(c.field("descriptor_dim")?, c, "")?,
            pca: PcaModel::from_blocks(c.field("pca_input")?, pca_output, c, "")?,
            linear: LinearModel::from_blocks(pca_output, c.field("outputs")?, c, "")?,
        })
    }
}
