//! Synthesize a cohort, train the three holistic formulations on four folds
//! and evaluate them on the fifth.
//!
//! ```bash
//! cargo run --release -p ildnet --example end_to_end -- 100 4
//! ```
//! Arguments: patients (default 100), slices per patient (default 4).

use std::time::Instant;

use ildnet::evalkit::{patient_folds, split_by_fold, EvalReport, PredictionRecord};
use ildnet::fvpool::{FvOptions, FvPipeline, GmmOptions};
use ildnet::holistic::{truth_labels, HolisticConfig, HolisticModel};
use ildnet::nn::LossHead;
use ildnet::synthdata::{generate_dataset, GeneratorSpec, LabeledSlice, CLASS_NAMES};

fn records(slices: &[LabeledSlice], scores: Vec<Vec<f64>>, presence: f64) -> Vec<PredictionRecord> {
    slices
        .iter()
        .zip(scores)
        .map(|(s, sc)| PredictionRecord::new(&s.slice_id, &s.patient_id, sc, truth_labels(s, presence)).unwrap())
        .collect()
}

fn show(name: &str, report: &EvalReport, secs: f64) {
    let aucs: Vec<String> = report
        .classes
        .iter()
        .map(|c| c.auc.map_or("NA".into(), |a| format!("{a:.3}")))
        .collect();
    println!(
        "{name:<8} AUC [{}] mean {:.3}  F1 {:.3}  acc {:.3}  ({secs:.1}s)",
        aucs.join(", "),
        report.mean_auc().unwrap_or(f64::NAN),
        report.overall.f1,
        report.overall.accuracy
    );
}

fn main() -> ildnet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let spec = GeneratorSpec {
        num_patients: args.first().copied().unwrap_or(100),
        slices_per_patient: args.get(1).copied().unwrap_or(4),
        ..Default::default()
    };
    let seed = 7;
    let start = Instant::now();
    let slices = generate_dataset(&spec, seed)?;
    let presence = 6000.0 * spec.area_scale();
    println!("{} slices, presence threshold {presence:.1} px", slices.len());

    let patients: Vec<&str> = slices.iter().map(|s| s.patient_id.as_str()).collect();
    let folds = patient_folds(&patients, 5, seed)?;
    let (train_idx, test_idx) = split_by_fold(&patients, &folds, 0)?;
    let train: Vec<LabeledSlice> = train_idx.iter().map(|&i| slices[i].clone()).collect();
    let test: Vec<LabeledSlice> = test_idx.iter().map(|&i| slices[i].clone()).collect();

    let mut mlc = None;
    for head in [LossHead::MultilabelLogistic, LossHead::RegressionSmoothL1] {
        let t = Instant::now();
        let mut cfg = HolisticConfig::new(head, presence)?;
        cfg.sgd.seed = seed;
        let (model, history) = HolisticModel::fit(&train, &cfg)?;
        let report = EvalReport::build(
            &records(&test, model.score(&test)?, presence),
            &model.default_thresholds(),
            &CLASS_NAMES,
        )?;
        println!("  loss {:.4} -> {:.4}", history[0], history[history.len() - 1]);
        show(head.short_name(), &report, t.elapsed().as_secs_f64());
        if head == LossHead::MultilabelLogistic {
            mlc = Some(model);
        }
    }

    let model = mlc.unwrap();
    let t = Instant::now();
    let opts = FvOptions {
        layer: "conv2".into(),
        gmm: GmmOptions {
            components: 32,
            seed,
            ..Default::default()
        },
        pca_dim: 512.min(train.len() - 1),
        ..Default::default()
    };
    let targets: Vec<Vec<f64>> = train
        .iter()
        .map(|s| truth_labels(s, presence).iter().map(|&b| b as u8 as f64).collect())
        .collect();
    let (fv, _) = FvPipeline::fit(model.network.clone(), &model.inputs(&train)?, &targets, &opts)?;
    let report = EvalReport::build(&records(&test, fv.predict(&model.inputs(&test)?)?, presence), &[0.5; 4], &CLASS_NAMES)?;
    show("fv", &report, t.elapsed().as_secs_f64());
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
