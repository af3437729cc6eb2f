//! Layered convolutional network with exact reverse-mode gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Channel-major activation shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    /// Fully connected; flattens its input.
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn pool(size: usize) -> Self {
        LayerSpec::MaxPool { size, stride: size }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "pool",
            LayerSpec::Dense { .. } => "fc",
        }
    }

    fn output_shape(&self, input: Shape3) -> std::result::Result<Shape3, String> {
        match *self {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err("kernel, stride and out_channels must be >= 1".into());
                }
                if input.channels != in_channels {
                    return Err(format!("expects {in_channels} input channels, got {}", input.channels));
                }
                let (h, w) = (input.height + 2 * padding, input.width + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok(Shape3::new(out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err("pool size and stride must be >= 1".into());
                }
                if input.height < size || input.width < size {
                    return Err(format!("pool {size} larger than input {}x{}", input.height, input.width));
                }
                Ok(Shape3::new(
                    input.channels,
                    (input.height - size) / stride + 1,
                    (input.width - size) / stride + 1,
                ))
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if out_dim == 0 {
                    return Err("out_dim must be >= 1".into());
                }
                if input.len() != in_dim {
                    return Err(format!("expects {in_dim} inputs, got {} ({input:?})", input.len()));
                }
                Ok(Shape3::new(out_dim, 1, 1))
            }
        }
    }

    fn param_sizes(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerSpec::Dense { in_dim, out_dim } => (out_dim * in_dim, out_dim),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                kernel, in_channels, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Small network for 3×64×64 inputs with `outputs` raw scores.
    pub fn desk_default(outputs: usize) -> Self {
        Self {
            input: Shape3::new(3, 64, 64),
            layers: vec![
                LayerSpec::conv(5, 3, 16),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(5, 16, 32),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(3, 32, 64),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::dense(64 * 8 * 8, 128),
                LayerSpec::Relu,
                LayerSpec::dense(128, outputs),
            ],
        }
    }

    /// Patch classifier for 3×32×32 inputs.
    pub fn patch_default(outputs: usize) -> Self {
        Self {
            input: Shape3::new(3, 32, 32),
            layers: vec![
                LayerSpec::conv(5, 3, 16),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::conv(5, 16, 32),
                LayerSpec::Relu,
                LayerSpec::pool(2),
                LayerSpec::dense(32 * 8 * 8, 64),
                LayerSpec::Relu,
                LayerSpec::dense(64, outputs),
            ],
        }
    }

    /// Five convolutions and two hidden fully connected layers on 3×224×224
    /// inputs, laid out like the CNN-F family.
    pub fn cnn_f(outputs: usize) -> Self {
        let conv = |kernel, stride, padding, i, o| LayerSpec::Conv {
            kernel,
            in_channels: i,
            out_channels: o,
            stride,
            padding,
        };
        let pool = LayerSpec::MaxPool { size: 3, stride: 2 };
        Self {
            input: Shape3::new(3, 224, 224),
            layers: vec![
                conv(11, 4, 0, 3, 64),
                LayerSpec::Relu,
                pool.clone(),
                conv(5, 1, 2, 64, 256),
                LayerSpec::Relu,
                pool.clone(),
                conv(3, 1, 1, 256, 256),
                LayerSpec::Relu,
                conv(3, 1, 1, 256, 256),
                LayerSpec::Relu,
                conv(3, 1, 1, 256, 256),
                LayerSpec::Relu,
                pool,
                LayerSpec::dense(256 * 5 * 5, 4096),
                LayerSpec::Relu,
                LayerSpec::dense(4096, 4096),
                LayerSpec::Relu,
                LayerSpec::dense(4096, outputs),
            ],
        }
    }

    /// Human-readable tags (`conv1`, `relu1`, `pool1`, `fc1`, ...), one per layer.
    pub fn tags(&self) -> Vec<String> {
        let mut counters = std::collections::HashMap::new();
        self.layers
            .iter()
            .map(|l| {
                let n = counters.entry(l.kind()).or_insert(0usize);
                *n += 1;
                format!("{}{}", l.kind(), n)
            })
            .collect()
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags().iter().position(|t| t == tag)
    }

    /// Activation shapes: entry 0 is the input, entry `i + 1` is the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        if self.input.is_empty() {
            return Err(Error::Shape(format!("empty input shape {:?}", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        let tags = self.tags();
        let mut shapes = vec![self.input];
        for (index, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|reason| Error::Composition {
                    index,
                    tag: tags[index].clone(),
                    reason,
                })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().len())
    }

    /// Check composition and that the network emits `expected` scores.
    pub fn validate(&self, expected: usize) -> Result<()> {
        let out = self.output_dim()?;
        if out != expected {
            let index = self.layers.len() - 1;
            return Err(Error::Composition {
                index,
                tag: self.tags()[index].clone(),
                reason: format!("final output dimension {out}, expected {expected}"),
            });
        }
        Ok(())
    }
}

/// Weights and bias of one layer (both empty for parameter-free layers).
///
/// Convolution weights are `[out, in, k, k]`, dense weights `[out, in]`, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    fn zeros_like(params: &[LayerParams]) -> Self {
        Self {
            layers: params
                .iter()
                .map(|p| LayerParams {
                    weight: vec![0.0; p.weight.len()],
                    bias: vec![0.0; p.bias.len()],
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

/// A network specification together with its parameters.
#[derive(Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape3>,
    params: Vec<LayerParams>,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self.params.clone(),
            id: next_id(),
            generation: 0,
        }
    }
}

/// Activations kept from [`Network::forward`] for [`Network::backward`].
#[derive(Debug)]
pub struct Cache {
    network_id: u64,
    generation: u64,
    samples: Vec<SampleCache>,
}

#[derive(Debug)]
struct SampleCache {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Argmax input offsets for pooling layers, empty elsewhere.
    argmax: Vec<Vec<u32>>,
}

impl Cache {
    pub fn batch(&self) -> usize {
        self.samples.len()
    }

    /// Output activation of layer `layer` for sample `sample`.
    pub fn layer_output(&self, sample: usize, layer: usize) -> &[f64] {
        &self.samples[sample].acts[layer + 1]
    }
}

impl Network {
    /// Fan-in scaled uniform initialisation from the `init` stream of `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = rng::stream(seed, "init");
        for (layer, p) in net.spec.layers.iter().zip(net.params.iter_mut()) {
            let fan_in = layer.fan_in();
            if fan_in == 0 {
                continue;
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            p.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let params = spec
            .layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_sizes();
                LayerParams {
                    weight: vec![0.0; w],
                    bias: vec![0.0; b],
                }
            })
            .collect();
        Ok(Self {
            spec,
            shapes,
            params,
            id: next_id(),
            generation: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        self.generation += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// All parameters flattened in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.weight.iter().chain(p.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for p in self.params_mut() {
            let (w, b) = (p.weight.len(), p.bias.len());
            p.weight.copy_from_slice(&flat[at..at + w]);
            p.bias.copy_from_slice(&flat[at + w..at + w + b]);
            at += w + b;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let input = self.shapes[0];
        if batch.row_len() != input.len() {
            return Err(Error::Composition {
                index: 0,
                tag: self.spec.tags()[0].clone(),
                reason: format!("batch rows hold {} values, input {input:?} needs {}", batch.row_len(), input.len()),
            });
        }
        Ok(batch.batch())
    }

    /// Raw scores for a batch, plus the activations needed by [`Network::backward`].
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Cache)> {
        let n = self.check_batch(batch)?;
        let samples: Vec<SampleCache> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_sample(batch.row(i), true))
            .collect();
        let out_dim = self.output_dim();
        let mut out = Vec::with_capacity(n * out_dim);
        for s in &samples {
            out.extend_from_slice(s.acts.last().unwrap());
        }
        let outputs = Tensor::new(&[n, out_dim], out)?;
        Ok((
            outputs,
            Cache {
                network_id: self.id,
                generation: self.generation,
                samples,
            },
        ))
    }

    /// Scores only; no activations are retained.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_sample(batch.row(i), false).acts.pop().unwrap())
            .collect();
        Tensor::from_rows(&rows)
    }

    /// Outputs of every layer for one input vector.
    pub fn activations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.shapes[0].len() {
            return Err(Error::Shape(format!("input has {} values, expected {}", input.len(), self.shapes[0].len())));
        }
        let mut cache = self.forward_sample(input, true);
        cache.acts.remove(0);
        Ok(cache.acts)
    }

    fn forward_sample(&self, input: &[f64], keep: bool) -> SampleCache {
        let mut acts = vec![input.to_vec()];
        let mut argmax = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
            let p = &self.params[i];
            let (y, idx) = match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => (conv_forward(x, ins, outs, kernel, stride, padding, p), Vec::new()),
                LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Vec::new()),
                LayerSpec::MaxPool { size, stride } => pool_forward(x, ins, outs, size, stride),
                LayerSpec::Dense { in_dim, out_dim } => (dense_forward(x, in_dim, out_dim, p), Vec::new()),
            };
            if !keep {
                acts.clear();
            }
            acts.push(y);
            argmax.push(idx);
        }
        SampleCache { acts, argmax }
    }

    /// Parameter gradients for `grad_out = dL/d(outputs)`, summed over the batch.
    ///
    /// Per-sample gradients are reduced in sample order, so the result does not
    /// depend on the thread count.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<Gradients> {
        if cache.network_id != self.id || cache.generation != self.generation {
            return Err(Error::State("cache was produced by a different network or before a parameter update".into()));
        }
        if cache.samples.is_empty() {
            return Err(Error::State("empty cache".into()));
        }
        if grad_out.batch() != cache.batch() || grad_out.row_len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "grad_out shape {:?} does not match batch {} x {}",
                grad_out.shape(),
                cache.batch(),
                self.output_dim()
            )));
        }
        let per_sample: Vec<Gradients> = cache
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.backward_sample(s, grad_out.row(i)))
            .collect();
        let mut total = Gradients::zeros_like(&self.params);
        for g in &per_sample {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn backward_sample(&self, cache: &SampleCache, grad_out: &[f64]) -> Gradients {
        let mut grads = Gradients::zeros_like(&self.params);
        let mut dy = grad_out.to_vec();
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let x = &cache.acts[i];
            let (ins, outs) = (self.shapes[i], self.shapes[i + 1]);
            let need_dx = i > 0;
            let g = &mut grads.layers[i];
            dy = match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => conv_backward(x, &dy, ins, outs, kernel, stride, padding, &self.params[i], g, need_dx),
                LayerSpec::Relu => dy.iter().zip(x).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
                LayerSpec::MaxPool { .. } => {
                    let mut dx = vec![0.0; ins.len()];
                    for (&d, &j) in dy.iter().zip(&cache.argmax[i]) {
                        dx[j as usize] += d;
                    }
                    dx
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    dense_backward(x, &dy, in_dim, out_dim, &self.params[i], g, need_dx)
                }
            };
        }
        grads
    }
}

/// `c = beta * c + op(a) · op(b)` with `op(a)` m×k and `op(b)` k×n, row-major storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

fn im2col(x: &[f64], ins: Shape3, outs: Shape3, kernel: usize, stride: usize, padding: usize) -> Vec<f64> {
    let positions = outs.height * outs.width;
    let mut cols = vec![0.0; ins.channels * kernel * kernel * positions];
    for c in 0..ins.channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..outs.height {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= ins.height as isize {
                        continue;
                    }
                    let src = &x[(c * ins.height + iy as usize) * ins.width..][..ins.width];
                    for ox in 0..outs.width {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < ins.width as isize {
                            dst[oy * outs.width + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], ins: Shape3, outs: Shape3, kernel: usize, stride: usize, padding: usize) -> Vec<f64> {
    let positions = outs.height * outs.width;
    let mut dx = vec![0.0; ins.len()];
    for c in 0..ins.channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..outs.height {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= ins.height as isize {
                        continue;
                    }
                    let base = (c * ins.height + iy as usize) * ins.width;
                    for ox in 0..outs.width {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < ins.width as isize {
                            dx[base + ix as usize] += src[oy * outs.width + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_forward(
    x: &[f64],
    ins: Shape3,
    outs: Shape3,
    kernel: usize,
    stride: usize,
    padding: usize,
    p: &LayerParams,
) -> Vec<f64> {
    let positions = outs.height * outs.width;
    let k = ins.channels * kernel * kernel;
    let cols = im2col(x, ins, outs, kernel, stride, padding);
    let mut y = vec![0.0; outs.channels * positions];
    for (o, row) in y.chunks_exact_mut(positions).enumerate() {
        row.fill(p.bias[o]);
    }
    gemm(outs.channels, k, positions, &p.weight, false, &cols, false, 1.0, &mut y);
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    dy: &[f64],
    ins: Shape3,
    outs: Shape3,
    kernel: usize,
    stride: usize,
    padding: usize,
    p: &LayerParams,
    g: &mut LayerParams,
    need_dx: bool,
) -> Vec<f64> {
    let positions = outs.height * outs.width;
    let k = ins.channels * kernel * kernel;
    let cols = im2col(x, ins, outs, kernel, stride, padding);
    gemm(outs.channels, positions, k, dy, false, &cols, true, 1.0, &mut g.weight);
    for (o, row) in dy.chunks_exact(positions).enumerate() {
        g.bias[o] += row.iter().sum::<f64>();
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dcols = vec![0.0; k * positions];
    gemm(k, outs.channels, positions, &p.weight, true, dy, false, 0.0, &mut dcols);
    col2im(&dcols, ins, outs, kernel, stride, padding)
}

fn pool_forward(x: &[f64], ins: Shape3, outs: Shape3, size: usize, stride: usize) -> (Vec<f64>, Vec<u32>) {
    let mut y = Vec::with_capacity(outs.len());
    let mut idx = Vec::with_capacity(outs.len());
    for c in 0..ins.channels {
        let plane = c * ins.height * ins.width;
        for oy in 0..outs.height {
            for ox in 0..outs.width {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for dy in 0..size {
                    for dx in 0..size {
                        let j = plane + (oy * stride + dy) * ins.width + ox * stride + dx;
                        // First maximum wins on ties.
                        if x[j] > best {
                            best = x[j];
                            at = j;
                        }
                    }
                }
                y.push(best);
                idx.push(at as u32);
            }
        }
    }
    (y, idx)
}

fn dense_forward(x: &[f64], in_dim: usize, out_dim: usize, p: &LayerParams) -> Vec<f64> {
    (0..out_dim)
        .map(|o| {
            let w = &p.weight[o * in_dim..(o + 1) * in_dim];
            p.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn dense_backward(
    x: &[f64],
    dy: &[f64],
    in_dim: usize,
    out_dim: usize,
    p: &LayerParams,
    g: &mut LayerParams,
    need_dx: bool,
) -> Vec<f64> {
    let mut dx = if need_dx { vec![0.0; in_dim] } else { Vec::new() };
    for o in 0..out_dim {
        let d = dy[o];
        g.bias[o] += d;
        if d == 0.0 {
            continue;
        }
        let gw = &mut g.weight[o * in_dim..(o + 1) * in_dim];
        gw.iter_mut().zip(x).for_each(|(a, &b)| *a += d * b);
        if need_dx {
            let w = &p.weight[o * in_dim..(o + 1) * in_dim];
            dx.iter_mut().zip(w).for_each(|(a, &b)| *a += d * b);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input: Shape3::new(2, 7, 7),
            layers: vec![
                LayerSpec::Conv {
                    kernel: 3,
                    in_channels: 2,
                    out_channels: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::conv(3, 3, 3),
                LayerSpec::pool(2),
                LayerSpec::dense(3 * 2 * 2, 5),
                LayerSpec::Relu,
                LayerSpec::dense(5, 4),
            ],
        }
    }

    fn random_batch(n: usize, len: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "batch");
        Tensor::new(&[n, len], (0..n * len).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn desk_default_shapes() {
        let spec = NetworkSpec::desk_default(4);
        spec.validate(4).unwrap();
        let net = Network::new(spec, 1).unwrap();
        let out = net.predict(&random_batch(2, 3 * 64 * 64, 0)).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert_eq!(
            net.spec().tags(),
            ["conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "conv3", "relu3", "pool3", "fc1", "relu4", "fc2"]
        );
        NetworkSpec::patch_default(5).validate(5).unwrap();
        NetworkSpec::cnn_f(4).validate(4).unwrap();
    }

    #[test]
    fn composition_errors_name_the_layer() {
        let mut spec = NetworkSpec::desk_default(4);
        spec.layers[3] = LayerSpec::conv(5, 8, 32);
        match spec.shapes() {
            Err(Error::Composition { index, tag, .. }) => {
                assert_eq!(index, 3);
                assert_eq!(tag, "conv2");
            }
            other => panic!("expected composition error, got {other:?}"),
        }
        assert!(matches!(NetworkSpec::desk_default(3).validate(4), Err(Error::Composition { .. })));
        let net = Network::new(NetworkSpec::desk_default(4), 0).unwrap();
        assert!(matches!(net.forward(&random_batch(1, 10, 0)), Err(Error::Composition { .. })));
    }

    #[test]
    fn zero_final_layer_gives_zero_scores() {
        let mut net = Network::new(tiny_spec(), 3).unwrap();
        let last = net.params_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let out = net.predict(&random_batch(3, 98, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure_and_row_independent() {
        let net = Network::new(tiny_spec(), 5).unwrap();
        let one = random_batch(1, 98, 2);
        let rep = Tensor::new(&[4, 98], one.data().repeat(4)).unwrap();
        let out = net.predict(&rep).unwrap();
        for r in out.rows() {
            assert_eq!(r, out.row(0));
        }
        let (again, _) = net.forward(&rep).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut net = Network::new(tiny_spec(), 5).unwrap();
        let (out, cache) = net.forward(&random_batch(2, 98, 2)).unwrap();
        let g = Tensor::zeros(out.shape()).unwrap();
        assert!(net.backward(&cache, &g).is_ok());
        net.params_mut()[0].bias[0] += 1.0;
        assert!(matches!(net.backward(&cache, &g), Err(Error::State(_))));
        let other = net.clone();
        let (_, cache) = net.forward(&random_batch(2, 98, 2)).unwrap();
        assert!(matches!(other.backward(&cache, &g), Err(Error::State(_))));
    }

    #[test]
    fn backward_is_linear_in_grad_out() {
        let net = Network::new(tiny_spec(), 9).unwrap();
        let (out, cache) = net.forward(&random_batch(3, 98, 4)).unwrap();
        let zero = net.backward(&cache, &Tensor::zeros(out.shape()).unwrap()).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let g1 = random_batch(3, 4, 6);
        let mut g2 = g1.clone();
        g2.scale(2.0);
        let a = net.backward(&cache, &g1).unwrap();
        let b = net.backward(&cache, &g2).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn flat_params_roundtrip() {
        let net = Network::new(tiny_spec(), 2).unwrap();
        let mut other = Network::zeros(tiny_spec()).unwrap();
        other.set_flat_params(&net.flat_params()).unwrap();
        assert_eq!(other.params(), net.params());
        assert!(other.set_flat_params(&[0.0]).is_err());
    }
}
