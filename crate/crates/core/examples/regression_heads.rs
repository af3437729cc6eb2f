//! Train the L2 and smooth-L1 regression heads on piecewise-linear targets,
//! with and without class balancing, and compare held-out AUCs.
//!
//! ```bash
//! cargo run --release -p ildnet --example regression_heads
//! ```

use ildnet::evalkit::{EvalReport, PredictionRecord};
use ildnet::holistic::{truth_labels, HolisticConfig, HolisticModel};
use ildnet::nn::LossHead;
use ildnet::synthdata::{generate_dataset, GeneratorSpec, LabelMapping, CLASS_NAMES};

fn main() -> ildnet::Result<()> {
    let spec = GeneratorSpec {
        num_patients: 40,
        slices_per_patient: 4,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, 5)?;
    let (train, test) = slices.split_at(128);
    let presence = 6000.0 * spec.area_scale();

    for head in [LossHead::RegressionL2, LossHead::RegressionSmoothL1] {
        for balance in [false, true] {
            let mut cfg = HolisticConfig::new(head, presence)?;
            cfg.mapping = LabelMapping::piecewise_default(presence)?;
            cfg.balance = balance;
            cfg.sgd.epochs = 10;
            let (model, history) = HolisticModel::fit(train, &cfg)?;
            let records = test
                .iter()
                .zip(model.score(test)?)
                .map(|(s, sc)| PredictionRecord::new(&s.slice_id, &s.patient_id, sc, truth_labels(s, presence)))
                .collect::<ildnet::Result<Vec<_>>>()?;
            let report = EvalReport::build(&records, &model.default_thresholds(), &CLASS_NAMES)?;
            println!(
                "{:<4} balance {:<5} loss {:.4} -> {:.4}  mean AUC {:.3}  F1 {:.3}",
                head.short_name(),
                balance,
                history[0],
                history[history.len() - 1],
                report.mean_auc().unwrap_or(f64::NAN),
                report.overall.f1
            );
        }
    }
    Ok(())
}
