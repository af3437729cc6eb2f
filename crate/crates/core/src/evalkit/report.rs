//! Report assembly and the CSV / SVG writers.
//!
//! `report.csv` columns: `name,precision,recall,f1,accuracy,auc,average_precision`.
//! One row per class, then an `overall` row holding the set-based scores and
//! the mean per-class AUC and average precision. Undefined values are `NA`.
//!
//! `curves.csv` columns: `class,curve,threshold,x,y` with `curve` either `roc`
//! (x = false positive rate, y = true positive rate) or `pr` (x = recall,
//! y = precision).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curves::{pr_curve, roc_auc, CurvePoint};
use super::metrics::{multilabel_metrics, per_class_f1, ClassMetrics, PredictionRecord, SetMetrics};
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "name,precision,recall,f1,accuracy,auc,average_precision";
pub const CURVES_HEADER: &str = "class,curve,threshold,x,y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub metrics: ClassMetrics,
    /// Fraction of records whose binary decision for this class is correct.
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub average_precision: Option<f64>,
    pub roc: Vec<CurvePoint>,
    pub pr: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub overall: SetMetrics,
    pub thresholds: Vec<f64>,
}

impl EvalReport {
    /// Per-class and overall scores. A class without both positive and
    /// negative records gets no AUC (and no AP without positives).
    pub fn build(records: &[PredictionRecord], thresholds: &[f64], class_names: &[&str]) -> Result<Self> {
        let overall = multilabel_metrics(records, thresholds)?;
        if class_names.len() != thresholds.len() {
            return Err(Error::Shape(format!(
                "{} class names for {} classes",
                class_names.len(),
                thresholds.len()
            )));
        }
        let mut classes = Vec::with_capacity(class_names.len());
        for (k, name) in class_names.iter().enumerate() {
            let scores: Vec<f64> = records.iter().map(|r| r.scores[k]).collect();
            let labels: Vec<bool> = records.iter().map(|r| r.true_labels[k]).collect();
            let metrics = per_class_f1(records, k, thresholds[k])?;
            let correct = scores
                .iter()
                .zip(&labels)
                .filter(|(s, &l)| (**s >= thresholds[k]) == l)
                .count();
            let (roc, auc) = match roc_auc(&scores, &labels) {
                Ok((pts, a)) => (pts, Some(a)),
                Err(Error::UndefinedAuc(_)) => (Vec::new(), None),
                Err(e) => return Err(e),
            };
            let (pr, ap) = match pr_curve(&scores, &labels) {
                Ok((pts, a)) => (pts, Some(a)),
                Err(Error::UndefinedAuc(_)) => (Vec::new(), None),
                Err(e) => return Err(e),
            };
            classes.push(ClassReport {
                name: name.to_string(),
                metrics,
                accuracy: correct as f64 / records.len() as f64,
                auc,
                average_precision: ap,
                roc,
                pr,
            });
        }
        Ok(Self {
            classes,
            overall,
            thresholds: thresholds.to_vec(),
        })
    }

    /// Mean AUC over the classes where it is defined.
    pub fn mean_auc(&self) -> Option<f64> {
        mean(self.classes.iter().filter_map(|c| c.auc))
    }

    pub fn mean_average_precision(&self) -> Option<f64> {
        mean(self.classes.iter().filter_map(|c| c.average_precision))
    }

    pub fn report_csv(&self, provenance: &str) -> String {
        let mut out = preamble(provenance, REPORT_HEADER);
        for c in &self.classes {
            let m = &c.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.name,
                num(m.precision),
                num(m.recall),
                num(m.f1),
                num(c.accuracy),
                opt(c.auc),
                opt(c.average_precision)
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "overall,{},{},{},{},{},{}",
            num(o.precision),
            num(o.recall),
            num(o.f1),
            num(o.accuracy),
            opt(self.mean_auc()),
            opt(self.mean_average_precision())
        );
        out
    }

    pub fn curves_csv(&self, provenance: &str) -> String {
        let mut out = preamble(provenance, CURVES_HEADER);
        for c in &self.classes {
            for (kind, pts) in [("roc", &c.roc), ("pr", &c.pr)] {
                for p in pts.iter() {
                    let _ = writeln!(out, "{},{kind},{},{},{}", c.name, num(p.threshold), num(p.x), num(p.y));
                }
            }
        }
        out
    }

    /// ROC or PR curves of every class in one chart.
    pub fn svg(&self, curve: CurveKind) -> String {
        let series: Vec<(&str, &[CurvePoint])> = self
            .classes
            .iter()
            .map(|c| {
                let pts = match curve {
                    CurveKind::Roc => &c.roc,
                    CurveKind::Pr => &c.pr,
                };
                (c.name.as_str(), pts.as_slice())
            })
            .collect();
        let (title, xl, yl) = match curve {
            CurveKind::Roc => ("ROC", "false positive rate", "true positive rate"),
            CurveKind::Pr => ("Precision-recall", "recall", "precision"),
        };
        plot_svg(title, xl, yl, &series)
    }

    /// Write `report.csv`, `curves.csv`, `roc.svg` and `pr.svg` into `dir`.
    pub fn write(&self, dir: &Path, provenance: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [
            ("report.csv", self.report_csv(provenance)),
            ("curves.csv", self.curves_csv(provenance)),
            ("roc.svg", self.svg(CurveKind::Roc)),
            ("pr.svg", self.svg(CurveKind::Pr)),
        ] {
            let path = dir.join(file);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Roc,
    Pr,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Comment line (when given) followed by the column header.
pub fn preamble(provenance: &str, header: &str) -> String {
    let mut out = String::new();
    if !provenance.is_empty() {
        let _ = writeln!(out, "# {provenance}");
    }
    let _ = writeln!(out, "{header}");
    out
}

/// Fixed six-decimal formatting so reports diff cleanly.
pub fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[CurvePoint])]) -> String {
    let (w, h, m) = (480.0, 420.0, 50.0);
    let side = w - 2.0 * m;
    let px = |x: f64| m + x.clamp(0.0, 1.0) * side;
    let py = |y: f64| m + (1.0 - y.clamp(0.0, 1.0)) * side;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.2}</text>"#, px(t), m + side + 15.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, m - 5.0, py(t) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, m + side / 2.0, m + side + 32.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{ylabel}</text>"#,
        m + side / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        }
        let ly = m + 15.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - m - 110.0, w - m - 90.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, w - m - 85.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
