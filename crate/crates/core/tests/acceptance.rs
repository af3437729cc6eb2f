//! Acceptance suite: one PASS/FAIL line per criterion. Failures are
//! reported without failing the run unless `ACCEPTANCE_STRICT=1` is set.
//!
//! ```bash
//! cargo test --release -p ildnet --test acceptance
//! ACCEPTANCE_ONLY=1,2,3 ACCEPTANCE_STRICT=1 cargo test -p ildnet --test acceptance
//! ```

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::*;
use ildnet::evalkit::{multilabel_metrics, patient_folds, roc_auc, split_by_fold, EvalReport, PredictionRecord};
use ildnet::fvpool::{fv_encode, gmm_fit, mvregress_fit, pca_fit, DescriptorSet, FvOptions, FvPipeline, GmmModel, GmmOptions};
use ildnet::holistic::{truth_labels, HolisticConfig, HolisticModel};
use ildnet::nn::{class_balance_weights, smooth_l1, smooth_l1_derivative, ClassStats, LossHead, LossSpec, Network, SgdOptions};
use ildnet::patchbase::{benchmark, build_patch_dataset, Method, PatchConfig, PatchModel, PATCH_SIZE, PATCH_STRIDE};
use ildnet::synthdata::{generate_dataset, GeneratorSpec, LabeledSlice, CLASS_NAMES};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = Lcg(2024);
    let spec = mixed_spec(4);
    let inputs: Vec<Vec<f64>> = (0..3).map(|_| rng.vec(spec.input.len())).collect();
    let beta = class_balance_weights(&ClassStats::new(vec![3, 8, 1, 5]), 4).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..2 {
        let net = Network::new(spec.clone(), seed).unwrap();
        for head in [LossHead::MultilabelLogistic, LossHead::RegressionL2, LossHead::RegressionSmoothL1] {
            let targets: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    (0..4)
                        .map(|_| match head {
                            LossHead::MultilabelLogistic => rng.next().signum(),
                            _ => rng.next(),
                        })
                        .collect()
                })
                .collect();
            for weights in [vec![1.0; 4], beta.clone()] {
                let loss = LossSpec {
                    head,
                    class_weights: weights,
                };
                worst = worst.max(gradient_check(&net, &inputs, &targets, &loss, 1e-5, 1e-6));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 1.0,
        format!("conv, relu, pool, fc under mlc/l2/sl1 (plain and balanced): max relative error {worst:.2e} (< 1e-4), {secs:.2}s (< 1s)"),
    )
}

fn c2_smooth_l1() -> Outcome {
    let mut bound_ok = true;
    let mut rng = Lcg(7);
    let grid = (0..=4000).map(|i| -10.0 + i as f64 * 0.005);
    for x in grid.chain((0..2000).map(|_| rng.next() * 50.0)).chain([1.0, -1.0, 0.0]) {
        let (l, q) = (smooth_l1(x), 0.5 * x * x);
        let equal = l == q;
        bound_ok &= l <= q && equal == (x.abs() <= 1.0);
    }
    let eps = 1e-12;
    let mut jump: f64 = 0.0;
    for s in [1.0, -1.0] {
        jump = jump
            .max((smooth_l1(s * (1.0 - eps)) - smooth_l1(s * (1.0 + eps))).abs())
            .max((smooth_l1_derivative(s * (1.0 - eps)) - smooth_l1_derivative(s * (1.0 + eps))).abs())
            .max((smooth_l1(s) - 0.5).abs());
    }
    outcome(
        bound_ok && jump < 1e-9,
        format!("bound with equality iff |x| <= 1: {bound_ok}; value/derivative jump at |x| = 1: {jump:.1e} (< 1e-9)"),
    )
}

fn c3_balance() -> Outcome {
    let mut rng = Lcg(99);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..100 {
        let counts: Vec<u64> = (0..4).map(|_| rng.below(100_000) as u64).collect();
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let b = class_balance_weights(&ClassStats::new(counts), 4).unwrap();
        worst_sum = worst_sum.max((b.iter().sum::<f64>() - 0.75).abs());
    }
    let table = [41194u64, 20560, 17392, 36328];
    let quoted = [0.16082, 0.20549, 0.21235, 0.17135];
    let b = class_balance_weights(&ClassStats::new(table.to_vec()), 4).unwrap();
    let total: u64 = table.iter().sum();
    // Exact rational (total - p) / (4 total), evaluated once in f64.
    let exact_err = b
        .iter()
        .zip(table)
        .map(|(v, p)| (v - (total - p) as f64 / (4 * total) as f64).abs())
        .fold(0.0, f64::max);
    let quoted_err = b.iter().zip(quoted).map(|(v, q)| (v - q).abs()).fold(0.0, f64::max);
    outcome(
        worst_sum <= 2.0 * f64::EPSILON && exact_err < 1e-6 && quoted_err <= 5e-6,
        format!(
            "|sum - 3/4| max {worst_sum:.1e} over 100 draws (<= 2 ulp); reference counts: {:.5?}, error vs exact {exact_err:.1e}, vs 5-digit values {quoted_err:.1e}",
            b
        ),
    )
}

fn random_gmm(rng: &mut Lcg, m: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..m).map(|_| 0.5 + rng.next().abs()).collect();
    let total: f64 = raw.iter().sum();
    GmmModel {
        dim: d,
        means: rng.vec(m * d),
        variances: (0..m * d).map(|_| 0.2 + rng.next().abs()).collect(),
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

fn c4_fv_invariance() -> Outcome {
    let mut rng = Lcg(4);
    let g = random_gmm(&mut rng, 6, 5);
    let mut identical = true;
    let mut tested = 0;
    for set in 0..50 {
        let n = 1 + set % 23;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.vec(5)).collect();
        let base = fv_encode(&DescriptorSet::new(5, rows.concat(), "t").unwrap(), &g, true).unwrap();
        for _ in 0..8 {
            let mut perm = rows.clone();
            rng.shuffle(&mut perm);
            let fv = fv_encode(&DescriptorSet::new(5, perm.concat(), "t").unwrap(), &g, true).unwrap();
            identical &= fv.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits());
            tested += 1;
        }
    }
    let big = random_gmm(&mut rng, 32, 256);
    let dim = fv_encode(&DescriptorSet::new(256, rng.vec(256 * 4), "conv3").unwrap(), &big, true)
        .unwrap()
        .len();
    outcome(
        identical && dim == 16384,
        format!("{tested} permutations over 50 sets bit-identical: {identical}; M=32, D=256 gives dimension {dim} (16384)"),
    )
}

fn c5_oracles() -> Outcome {
    let mut rng = Lcg(55);
    let (mut set_err, mut auc_err, mut pca_err, mut ridge_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for trial in 0..25 {
        let recs: Vec<PredictionRecord> = (0..3 + trial)
            .map(|i| {
                let scores = (0..4).map(|_| (rng.next() * 4.0).round() / 4.0).collect();
                let truth = (0..4).map(|_| rng.next() > 0.1).collect();
                PredictionRecord::new(format!("s{i}"), "p", scores, truth).unwrap()
            })
            .collect();
        let th = [0.0, 0.25, -0.25, 0.5];
        let m = multilabel_metrics(&recs, &th).unwrap();
        let (a, p, r, f) = set_metrics_oracle(&recs, &th);
        for (x, y) in [(m.accuracy, a), (m.precision, p), (m.recall, r), (m.f1, f)] {
            set_err = set_err.max((x - y).abs());
        }

        let n = 4 + trial;
        let scores: Vec<f64> = (0..n).map(|_| (rng.next() * 5.0).round()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next() > 0.0).collect();
        labels[0] = true;
        labels[1] = false;
        let (_, auc) = roc_auc(&scores, &labels).unwrap();
        auc_err = auc_err.max((auc - pairwise_auc(&scores, &labels)).abs());

        let (rows, d, p) = if trial % 2 == 0 { (25, 4, 2) } else { (5, 8, 3) };
        let data: Vec<f64> = (0..rows * d).map(|i| rng.next() * (1.0 + (i % d) as f64)).collect();
        let model = pca_fit(&data, d, p).unwrap();
        let (_, vectors) = jacobi_eigen(&covariance(&data, d), d);
        for k in 0..p {
            let dot: f64 = (0..d).map(|j| model.basis[j * p + k] * vectors[k][j]).sum();
            pca_err = pca_err.max((dot.abs() - 1.0).abs());
        }

        let (n, f, c) = (15 + trial, 1 + trial % 4, 2);
        let x = rng.vec(n * f);
        let y = rng.vec(n * c);
        let w = mvregress_fit(&x, f, &y, c, 0.0).unwrap().weights;
        for (a, b) in w.iter().zip(ridge_oracle(&x, f, &y, c, 0.0)) {
            ridge_err = ridge_err.max((a - b).abs());
        }
    }
    outcome(
        set_err < 1e-12 && auc_err < 1e-9 && pca_err < 1e-8 && ridge_err < 1e-8,
        format!(
            "25 instances each: set metrics {set_err:.1e} (< 1e-12), AUC vs pairwise {auc_err:.1e} (< 1e-9), PCA direction 1-|cos| {pca_err:.1e} (< 1e-8), ridge vs normal equations {ridge_err:.1e} (< 1e-8)"
        ),
    )
}

fn c6_em() -> Outcome {
    let mut monotone = true;
    for seed in 0..10u64 {
        let mut rng = Lcg(300 + seed);
        let data: Vec<f64> = (0..400 * 2).map(|i| rng.next() + if i % 4 < 2 { 1.5 } else { 0.0 }).collect();
        let fit = gmm_fit(
            &data,
            2,
            &GmmOptions {
                components: 3,
                rel_tol: 0.0,
                max_iters: 50,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        monotone &= fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    }
    let mut rng = Lcg(61);
    let centres = [[-2.0, 1.0], [3.0, -1.5]];
    let mut data = Vec::new();
    for i in 0..4000 {
        let c = centres[i % 2];
        for v in c {
            data.push(v + (0..6).map(|_| rng.next()).sum::<f64>() * 0.1);
        }
    }
    let fit = gmm_fit(
        &data,
        2,
        &GmmOptions {
            components: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let miss = centres
        .iter()
        .map(|c| {
            (0..2)
                .map(|m| {
                    let mu = fit.model.mean(m);
                    (mu[0] - c[0]).abs().max((mu[1] - c[1]).abs())
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    outcome(
        monotone && miss < 0.05,
        format!("log-likelihood non-decreasing on 10 datasets: {monotone}; two-cluster mean error {miss:.4} (< 0.05)"),
    )
}

fn split(slices: &[LabeledSlice], seed: u64) -> (Vec<LabeledSlice>, Vec<LabeledSlice>) {
    let patients: Vec<&str> = slices.iter().map(|s| s.patient_id.as_str()).collect();
    let folds = patient_folds(&patients, 5, seed).unwrap();
    let (tr, te) = split_by_fold(&patients, &folds, 0).unwrap();
    (
        tr.iter().map(|&i| slices[i].clone()).collect(),
        te.iter().map(|&i| slices[i].clone()).collect(),
    )
}

fn report(test: &[LabeledSlice], scores: Vec<Vec<f64>>, presence: f64, thresholds: &[f64]) -> EvalReport {
    let recs: Vec<PredictionRecord> = test
        .iter()
        .zip(scores)
        .map(|(s, sc)| PredictionRecord::new(&s.slice_id, &s.patient_id, sc, truth_labels(s, presence)).unwrap())
        .collect();
    EvalReport::build(&recs, thresholds, &CLASS_NAMES).unwrap()
}

fn c7_end_to_end() -> Outcome {
    let start = Instant::now();
    let seed = 7;
    let spec = GeneratorSpec {
        num_patients: 100,
        slices_per_patient: 4,
        grid_size: 64,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, seed).unwrap();
    let presence = 6000.0 * spec.area_scale();
    let (train, test) = split(&slices, seed);
    let mut aucs = Vec::new();
    let mut mlc = None;
    for head in [LossHead::MultilabelLogistic, LossHead::RegressionSmoothL1] {
        let mut cfg = HolisticConfig::new(head, presence).unwrap();
        cfg.sgd.seed = seed;
        let (model, _) = HolisticModel::fit(&train, &cfg).unwrap();
        let r = report(&test, model.score(&test).unwrap(), presence, &model.default_thresholds());
        aucs.push(r.mean_auc().unwrap_or(0.0));
        if head == LossHead::MultilabelLogistic {
            mlc = Some(model);
        }
    }
    let model = mlc.unwrap();
    let targets: Vec<Vec<f64>> = train
        .iter()
        .map(|s| truth_labels(s, presence).iter().map(|&b| b as u8 as f64).collect())
        .collect();
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
    let (fv, _) = FvPipeline::fit(model.network.clone(), &model.inputs(&train).unwrap(), &targets, &opts).unwrap();
    let r = report(&test, fv.predict(&model.inputs(&test).unwrap()).unwrap(), presence, &[0.5; 4]);
    aucs.push(r.mean_auc().unwrap_or(0.0));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        aucs[0] >= 0.90 && aucs[1] >= 0.90 && aucs[2] >= 0.85 && secs <= 900.0,
        format!(
            "100 patients x 4 slices, fold 0 of 5: mean AUC mlc {:.3}, sl1 {:.3} (>= 0.90), FV(conv2) {:.3} (>= 0.85); {secs:.0}s on {} thread(s) (<= 900s)",
            aucs[0],
            aucs[1],
            aucs[2],
            rayon::current_num_threads()
        ),
    )
}

fn c8_balancing() -> Outcome {
    let mut f1 = [0.0, 0.0];
    let mut rows = Vec::new();
    for seed in 1..=3u64 {
        let spec = GeneratorSpec {
            num_patients: 100,
            slices_per_patient: 4,
            prevalence: [0.35, 0.3, 0.05, 0.3],
            ..Default::default()
        };
        let slices = generate_dataset(&spec, seed).unwrap();
        let presence = 6000.0 * spec.area_scale();
        let (train, test) = split(&slices, seed);
        let mut pair = [0.0; 2];
        for (arm, balance) in [false, true].into_iter().enumerate() {
            let mut cfg = HolisticConfig::new(LossHead::MultilabelLogistic, presence).unwrap();
            cfg.sgd.seed = seed;
            cfg.balance = balance;
            let (model, _) = HolisticModel::fit(&train, &cfg).unwrap();
            let r = report(&test, model.score(&test).unwrap(), presence, &model.default_thresholds());
            pair[arm] = r.overall.f1;
            f1[arm] += r.overall.f1 / 3.0;
        }
        rows.push(format!("seed {seed}: {:.3} vs {:.3}", pair[1], pair[0]));
    }
    outcome(
        f1[1] >= f1[0],
        format!(
            "Honeycomb at 5% prevalence, overall F1 balanced vs unbalanced ({}); mean {:.3} vs {:.3}",
            rows.join(", "),
            f1[1],
            f1[0]
        ),
    )
}

fn c9_timing() -> Outcome {
    let spec = GeneratorSpec {
        num_patients: 2,
        slices_per_patient: 2,
        grid_size: 512,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, 9).unwrap();
    // Inference cost does not depend on weight values; both models get a
    // short fit so the timed code paths are the deployed ones.
    let small = generate_dataset(
        &GeneratorSpec {
            num_patients: 2,
            slices_per_patient: 2,
            grid_size: 128,
            ..Default::default()
        },
        9,
    )
    .unwrap();
    let mut pcfg = PatchConfig::default();
    pcfg.sgd.epochs = 1;
    let (patch, _) = PatchModel::fit(&build_patch_dataset(&small, &pcfg).unwrap(), &pcfg).unwrap();
    let mut hcfg = HolisticConfig::new(LossHead::MultilabelLogistic, 6000.0 * (128.0 * 128.0) / (512.0 * 512.0)).unwrap();
    hcfg.sgd = SgdOptions {
        epochs: 1,
        ..hcfg.sgd
    };
    let (holistic, _) = HolisticModel::fit(&small, &hcfg).unwrap();
    let patches = patch.slide_predict(&slices[0], PATCH_STRIDE).unwrap().patches.len();
    let methods: Vec<Method> = vec![
        ("holistic", Box::new(|s| holistic.score(std::slice::from_ref(s)).map(|_| ()))),
        ("patch", Box::new(|s| patch.slide_predict(s, PATCH_STRIDE).map(|_| ()))),
    ];
    let t = benchmark(&methods, &slices, 2, 1).unwrap();
    let ratio = t[1].mean_s / t[0].mean_s;
    outcome(
        ratio >= 20.0,
        format!(
            "512x512 slices, 1 thread: holistic {:.4}s, {PATCH_SIZE}x{PATCH_SIZE} stride-{PATCH_STRIDE} patches ({patches} on the first slice) {:.4}s per slice; speedup {ratio:.1}x (>= 20x)",
            t[0].mean_s, t[1].mean_s
        ),
    )
}

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let data = dir.join("data");
    let model = dir.join("mlc.bin");
    let eval = dir.join("eval");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), s(&data), "--patients".into(), "20".into(), "--slices".into(), "3".into(), "--seed".into(), "10".into()],
        vec!["train".into(), "--data".into(), s(&data), "--out".into(), s(&model), "--seed".into(), "10".into(), "--epochs".into(), "3".into()],
        vec!["eval".into(), "--data".into(), s(&data), "--model".into(), s(&model), "--out".into(), s(&eval)],
    ];
    for args in runs {
        let code = ildnet::cli::run(std::iter::once("ildnet".to_string()).chain(args));
        assert_eq!(code, 0);
    }
    ["report.csv", "curves.csv"]
        .iter()
        .map(|f| fs::read(eval.join(f)).unwrap())
        .collect()
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let a = pipeline(&tmp.path().join("run1"));
    let b = pipeline(&tmp.path().join("run2"));
    let bytes: usize = a.iter().map(Vec::len).sum();
    outcome(
        a == b,
        format!("synth -> train -> eval twice with seed 10: report.csv and curves.csv ({bytes} bytes) identical: {}", a == b),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "smooth-L1 properties", c2_smooth_l1),
        (3, "class-balancing identity", c3_balance),
        (4, "FV pooling invariance", c4_fv_invariance),
        (5, "oracle equivalence", c5_oracles),
        (6, "EM sanity", c6_em),
        (7, "end-to-end learning", c7_end_to_end),
        (8, "class-balancing benefit", c8_balancing),
        (9, "timing direction", c9_timing),
        (10, "determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
