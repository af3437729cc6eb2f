use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec};

/// Local descriptors taken from one activation map. Row order carries no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    /// `count × dim`, row-major.
    pub vectors: Vec<f64>,
    pub layer_tag: String,
}

impl DescriptorSet {
    pub fn new(dim: usize, vectors: Vec<f64>, layer_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form descriptors of dimension {dim}",
                vectors.len()
            )));
        }
        Ok(Self {
            dim,
            vectors,
            layer_tag: layer_tag.into(),
        })
    }

    pub fn count(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }
}

/// Index of a convolutional or fully connected layer by tag.
pub fn descriptor_layer(spec: &NetworkSpec, layer_tag: &str) -> Result<usize> {
    let index = spec
        .tag_index(layer_tag)
        .ok_or_else(|| Error::Lookup(layer_tag.to_string()))?;
    match spec.layers[index] {
        LayerSpec::Conv { .. } | LayerSpec::Dense { .. } => Ok(index),
        _ => Err(Error::Lookup(format!(
            "{layer_tag} (descriptors come from conv or fc layers)"
        ))),
    }
}

/// One `D`-vector per spatial position of the layer output (`D` = channels);
/// a fully connected layer yields a single descriptor.
///
/// `layer_outputs[i]` must be the output of layer `i`, as returned by
/// [`crate::nn::Network::activations`].
pub fn extract_descriptors(spec: &NetworkSpec, layer_outputs: &[Vec<f64>], layer_tag: &str) -> Result<DescriptorSet> {
    let index = descriptor_layer(spec, layer_tag)?;
    let shape = spec.shapes()?[index + 1];
    let map = layer_outputs
        .get(index)
        .ok_or_else(|| Error::State(format!("no cached output for {layer_tag}")))?;
    if map.len() != shape.len() {
        return Err(Error::Shape(format!(
            "{layer_tag} output holds {} values, expected {}",
            map.len(),
            shape.len()
        )));
    }
    let positions = shape.height * shape.width;
    let d = shape.channels;
    let mut vectors = vec![0.0; positions * d];
    for c in 0..d {
        for p in 0..positions {
            vectors[p * d + c] = map[c * positions + p];
        }
    }
    DescriptorSet::new(d, vectors, layer_tag)
}
