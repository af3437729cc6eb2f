//! Mini-batch SGD with momentum and weight decay.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{loss_softmax_cross_entropy, LossSpec};
use super::network::{Network, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the learning rate after each epoch.
    pub lr_decay: f64,
    /// Random left-right flips of training inputs.
    pub hflip: bool,
    pub seed: u64,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 20,
            lr_decay: 0.95,
            hflip: false,
            seed: 0,
        }
    }
}

impl SgdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight_decay", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::param("lr_decay", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// What the network is trained to produce.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Multi-label head with one target row per input.
    MultiLabel { loss: LossSpec, targets: Vec<Vec<f64>> },
    /// Single-label softmax cross-entropy with one class index per input.
    Softmax { labels: Vec<usize> },
}

impl Objective {
    fn len(&self) -> usize {
        match self {
            Objective::MultiLabel { targets, .. } => targets.len(),
            Objective::Softmax { labels } => labels.len(),
        }
    }

    fn evaluate(&self, outputs: &Tensor, idx: &[usize]) -> Result<(f64, Tensor)> {
        match self {
            Objective::MultiLabel { loss, targets } => {
                let rows: Vec<&[f64]> = idx.iter().map(|&i| targets[i].as_slice()).collect();
                loss.evaluate(outputs, &Tensor::from_rows(&rows)?)
            }
            Objective::Softmax { labels } => {
                let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                loss_softmax_cross_entropy(outputs, &l)
            }
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean training loss per epoch, measured on the fly.
    pub history: Vec<f64>,
}

/// Train from a fresh initialisation of `spec` (seeded from `opt.seed`).
pub fn train(inputs: &[Vec<f64>], objective: &Objective, spec: &NetworkSpec, opt: &SgdOptions) -> Result<TrainOutcome> {
    let net = Network::new(spec.clone(), opt.seed)?;
    train_from(net, inputs, objective, opt)
}

/// Continue training an existing network.
pub fn train_from(mut net: Network, inputs: &[Vec<f64>], objective: &Objective, opt: &SgdOptions) -> Result<TrainOutcome> {
    opt.validate()?;
    if inputs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if inputs.len() != objective.len() {
        return Err(Error::Data(format!("{} inputs but {} targets", inputs.len(), objective.len())));
    }
    if let Objective::MultiLabel { loss, targets } = objective {
        loss.validate()?;
        if loss.class_weights.len() != net.output_dim() || targets.iter().any(|t| t.len() != net.output_dim()) {
            return Err(Error::Shape(format!("targets and class weights must have {} entries", net.output_dim())));
        }
    }
    let input_shape = net.shapes()[0];
    let row_len = input_shape.len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != row_len) {
        return Err(Error::Shape(format!("input with {} values, network expects {row_len}", bad.len())));
    }

    let mut shuffle = rng::stream(opt.seed, "shuffle");
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = net
        .params()
        .iter()
        .map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]))
        .collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(opt.epochs);
    let mut lr = opt.learning_rate;

    for epoch in 0..opt.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(opt.batch_size) {
            let mut data = Vec::with_capacity(idx.len() * row_len);
            for &i in idx {
                if opt.hflip && shuffle.gen_bool(0.5) {
                    let w = input_shape.width;
                    data.extend(inputs[i].chunks_exact(w).flat_map(|r| r.iter().rev()));
                } else {
                    data.extend_from_slice(&inputs[i]);
                }
            }
            let batch = Tensor::new(&[idx.len(), row_len], data)?;
            let (out, cache) = net.forward(&batch)?;
            let (loss, grad) = objective.evaluate(&out, idx)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss * idx.len() as f64;
            let grads = net.backward(&cache, &grad)?;
            for ((p, g), (vw, vb)) in net.params_mut().iter_mut().zip(&grads.layers).zip(velocity.iter_mut()) {
                for ((w, &gw), v) in p.weight.iter_mut().zip(&g.weight).zip(vw.iter_mut()) {
                    *v = opt.momentum * *v + gw + opt.weight_decay * *w;
                    *w -= lr * *v;
                }
                for ((b, &gb), v) in p.bias.iter_mut().zip(&g.bias).zip(vb.iter_mut()) {
                    *v = opt.momentum * *v + gb;
                    *b -= lr * *v;
                }
            }
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        if net.params().iter().any(|p| p.weight.iter().any(|w| !w.is_finite())) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        history.push(mean);
        lr *= opt.lr_decay;
    }
    Ok(TrainOutcome { network: net, history })
}

/// Scores for many inputs, batched.
pub fn predict_all(net: &Network, inputs: &[Vec<f64>], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let batch = Tensor::from_rows(chunk)?;
        out.extend(net.predict(&batch)?.rows().map(|r| r.to_vec()));
    }
    Ok(out)
}
