//! Whole-slice multi-label models: preprocessing, training and scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{predict_all, train, ClassStats, LossHead, LossSpec, Network, NetworkSpec, Objective, SgdOptions};
use crate::preprocess::{make_input_with, ChannelStats, WindowSet};
use crate::synthdata::{mask_to_counts, LabelMapping, LabeledSlice, NUM_CLASSES};

/// Everything needed to train a holistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolisticConfig {
    pub head: LossHead,
    /// Count-to-target mapping, in pixels of the slices it is applied to.
    pub mapping: LabelMapping,
    /// Pixel count at which a class counts as present (evaluation truth).
    pub presence: f64,
    pub balance: bool,
    pub input_size: usize,
    pub windows: WindowSet,
    pub sgd: SgdOptions,
}

impl HolisticConfig {
    pub fn new(head: LossHead, presence: f64) -> Result<Self> {
        Ok(Self {
            head,
            mapping: LabelMapping::step(presence)?,
            presence,
            balance: false,
            input_size: 64,
            windows: WindowSet::default(),
            sgd: SgdOptions {
                learning_rate: Self::default_learning_rate(head),
                batch_size: 8,
                epochs: 25,
                hflip: true,
                ..SgdOptions::default()
            },
        })
    }

    /// The squared loss has an unbounded gradient while initial outputs are
    /// far from the targets, so it starts an order of magnitude lower.
    pub fn default_learning_rate(head: LossHead) -> f64 {
        match head {
            LossHead::RegressionL2 => 0.0003,
            _ => 0.003,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.presence > 0.0 && self.presence.is_finite()) {
            return Err(Error::param("presence", "must be finite and > 0"));
        }
        if self.head == LossHead::MultilabelLogistic && !matches!(self.mapping, LabelMapping::Step { .. }) {
            return Err(Error::Usage(format!(
                "the mlc head needs binary targets; use a step mapping instead of {}",
                self.mapping
            )));
        }
        self.sgd.validate()
    }
}

/// Binary ground truth: class present when its pixel count reaches `presence`.
pub fn truth_labels(slice: &LabeledSlice, presence: f64) -> Vec<bool> {
    mask_to_counts(slice).0.iter().map(|&c| c as f64 >= presence).collect()
}

/// Training targets for one slice under `mapping`.
pub fn slice_targets(slice: &LabeledSlice, mapping: &LabelMapping) -> Vec<f64> {
    mask_to_counts(slice).0.iter().map(|&c| mapping.apply(c as f64)).collect()
}

/// A trained network with its input pipeline.
#[derive(Debug, Clone)]
pub struct HolisticModel {
    pub network: Network,
    pub config: HolisticConfig,
    pub stats: ChannelStats,
    pub class_weights: Vec<f64>,
}

/// Windowed, resized and standardised network inputs, in slice order.
pub fn prepare_inputs(slices: &[LabeledSlice], windows: &WindowSet, size: usize, stats: &ChannelStats) -> Result<Vec<Vec<f64>>> {
    slices
        .par_iter()
        .map(|s| Ok(stats.apply(&make_input_with(s, windows, size)?)))
        .collect()
}

impl HolisticModel {
    /// Train on `slices` from a fresh initialisation.
    pub fn fit(slices: &[LabeledSlice], config: &HolisticConfig) -> Result<(Self, Vec<f64>)> {
        config.validate()?;
        if slices.is_empty() {
            return Err(Error::Data("no training slices".into()));
        }
        let images = slices
            .par_iter()
            .map(|s| make_input_with(s, &config.windows, config.input_size))
            .collect::<Result<Vec<_>>>()?;
        let stats = ChannelStats::fit(&images)?;
        let inputs: Vec<Vec<f64>> = images.iter().map(|img| stats.apply(img)).collect();
        drop(images);

        let truth: Vec<Vec<bool>> = slices.iter().map(|s| truth_labels(s, config.presence)).collect();
        let loss = if config.balance {
            let positives = (0..NUM_CLASSES)
                .map(|k| truth.iter().filter(|t| t[k]).count() as u64)
                .collect();
            LossSpec::balanced(config.head, &ClassStats::new(positives))?
        } else {
            LossSpec::new(config.head, NUM_CLASSES)
        };
        let targets: Vec<Vec<f64>> = slices
            .iter()
            .map(|s| {
                let y = slice_targets(s, &config.mapping);
                if config.head == LossHead::MultilabelLogistic {
                    y.iter().map(|&v| if v >= 0.5 { 1.0 } else { -1.0 }).collect()
                } else {
                    y
                }
            })
            .collect();
        let mut spec = NetworkSpec::desk_default(NUM_CLASSES);
        spec.input.height = config.input_size;
        spec.input.width = config.input_size;
        if config.input_size != 64 {
            let side = config.input_size / 8;
            spec.layers[9] = crate::nn::LayerSpec::dense(64 * side * side, 128);
        }
        let class_weights = loss.class_weights.clone();
        let objective = Objective::MultiLabel { loss, targets };
        let outcome = train(&inputs, &objective, &spec, &config.sgd)?;
        Ok((
            Self {
                network: outcome.network,
                config: config.clone(),
                stats,
                class_weights,
            },
            outcome.history,
        ))
    }

    pub fn inputs(&self, slices: &[LabeledSlice]) -> Result<Vec<Vec<f64>>> {
        prepare_inputs(slices, &self.config.windows, self.config.input_size, &self.stats)
    }

    /// Raw network outputs per slice.
    pub fn score(&self, slices: &[LabeledSlice]) -> Result<Vec<Vec<f64>>> {
        predict_all(&self.network, &self.inputs(slices)?, 32)
    }

    /// Decision thresholds on the raw outputs: 0 for logits, otherwise half
    /// the target value a class receives at the presence count.
    pub fn default_thresholds(&self) -> Vec<f64> {
        let t = match self.config.head {
            LossHead::MultilabelLogistic => 0.0,
            _ => 0.5 * self.config.mapping.apply(self.config.presence),
        };
        vec![t; NUM_CLASSES]
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            "holistic-model",
            serde_json::json!({
                "spec": self.network.spec(),
                "config": self.config,
                "stats": self.stats,
                "class_weights": self.class_weights,
            }),
        );
        self.network.append_blocks(&mut c, "");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("holistic-model")?;
        let spec: NetworkSpec = c.field("spec")?;
        Ok(Self {
            network: Network::from_blocks(spec, c, "")?,
            config: c.field("config")?,
            stats: c.field("stats")?,
            class_weights: c.field("class_weights")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, GeneratorSpec};

    #[test]
    fn mlc_rejects_soft_mappings() {
        let mut cfg = HolisticConfig::new(LossHead::MultilabelLogistic, 90.0).unwrap();
        cfg.mapping = LabelMapping::piecewise_default(90.0).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
        cfg.head = LossHead::RegressionSmoothL1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn short_training_roundtrips() {
        let spec = GeneratorSpec {
            num_patients: 2,
            slices_per_patient: 3,
            grid_size: 32,
            ..Default::default()
        };
        let slices = generate_dataset(&spec, 5).unwrap();
        let mut cfg = HolisticConfig::new(LossHead::RegressionSmoothL1, 20.0).unwrap();
        cfg.input_size = 32;
        cfg.sgd.epochs = 1;
        let (model, history) = HolisticModel::fit(&slices, &cfg).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(model.class_weights, vec![1.0; 4]);
        let scores = model.score(&slices).unwrap();
        let back = HolisticModel::from_container(&Container::from_bytes(&model.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.score(&slices).unwrap(), scores);
        assert_eq!(model.default_thresholds(), vec![0.5; 4]);
    }
}
