//! Multi-label metrics, ROC / precision-recall curves, patient-level folds
//! and report files.

mod curves;
mod folds;
mod metrics;
mod report;

pub use curves::{pr_curve, roc_auc, CurvePoint};
pub use folds::{fold_lookup, patient_folds, split_by_fold};
pub use metrics::{multilabel_metrics, per_class_f1, ClassMetrics, PredictionRecord, SetMetrics};
pub use report::{num, preamble, ClassReport, CurveKind, EvalReport, CURVES_HEADER, REPORT_HEADER};
