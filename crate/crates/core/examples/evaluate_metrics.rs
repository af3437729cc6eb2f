//! Score a handful of hand-written predictions and write the report, curve
//! tables and plots to a directory.
//!
//! ```bash
//! cargo run --release -p ildnet --example evaluate_metrics -- /tmp/ild-eval
//! ```

use std::path::PathBuf;

use ildnet::evalkit::{multilabel_metrics, per_class_f1, roc_auc, EvalReport, PredictionRecord};
use ildnet::synthdata::CLASS_NAMES;

fn main() -> ildnet::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ildnet-eval-example"));
    let rows: [([f64; 4], [bool; 4]); 6] = [
        ([0.9, 0.1, -0.4, 0.2], [true, false, false, false]),
        ([0.3, 0.8, 0.6, -0.9], [true, true, true, false]),
        ([-0.5, -0.2, -0.7, 0.9], [false, false, false, true]),
        ([-0.8, 0.4, -0.1, -0.3], [false, true, false, false]),
        ([-0.6, -0.9, -0.8, -0.7], [false, false, false, false]),
        ([0.2, -0.3, 0.5, 0.4], [false, false, true, true]),
    ];
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (s, t))| PredictionRecord::new(format!("s{i}"), format!("P{}", i / 2), s.to_vec(), t.to_vec()))
        .collect::<ildnet::Result<Vec<_>>>()?;
    let thresholds = [0.0; 4];

    let m = multilabel_metrics(&records, &thresholds)?;
    println!("accuracy {:.3} precision {:.3} recall {:.3} F1 {:.3}", m.accuracy, m.precision, m.recall, m.f1);
    for (k, name) in CLASS_NAMES.iter().enumerate() {
        let c = per_class_f1(&records, k, thresholds[k])?;
        let scores: Vec<f64> = records.iter().map(|r| r.scores[k]).collect();
        let labels: Vec<bool> = records.iter().map(|r| r.true_labels[k]).collect();
        let (_, auc) = roc_auc(&scores, &labels)?;
        println!("{name:<12} P {:.3} R {:.3} F1 {:.3} AUC {auc:.3}", c.precision, c.recall, c.f1);
    }

    let report = EvalReport::build(&records, &thresholds, &CLASS_NAMES)?;
    report.write(&dir, "example scores")?;
    println!("wrote report.csv, curves.csv and plots to {}", dir.display());
    print!("{}", report.report_csv("example scores"));
    Ok(())
}
