//! Train the sliding-window patch classifier on 224×224 slices and compare
//! its per-slice inference time with a holistic model on the same slices.
//!
//! ```bash
//! cargo run --release -p ildnet --example patch_baseline
//! ```

use ildnet::holistic::{truth_labels, HolisticConfig, HolisticModel};
use ildnet::nn::LossHead;
use ildnet::patchbase::{benchmark, build_patch_dataset, Method, PatchConfig, PatchModel, PATCH_STRIDE, TIMING_HEADER};
use ildnet::synthdata::{generate_dataset, GeneratorSpec, CLASS_NAMES};

fn main() -> ildnet::Result<()> {
    let spec = GeneratorSpec {
        num_patients: 6,
        slices_per_patient: 2,
        grid_size: 224,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, 11)?;
    let (train, test) = slices.split_at(10);

    let mut config = PatchConfig::default();
    config.sgd.epochs = 3;
    config.sgd.learning_rate = 0.003;
    let data = build_patch_dataset(train, &config)?;
    println!("{} training patches", data.images.len());
    let (patch, history) = PatchModel::fit(&data, &config)?;
    println!("patch loss per epoch {history:.3?}");

    let presence = 6000.0 * spec.area_scale();
    for s in test {
        let pred = patch.slide_predict(s, PATCH_STRIDE)?;
        let truth = truth_labels(s, presence);
        println!("{} ({} patches)", s.slice_id, pred.patches.len());
        for (k, name) in CLASS_NAMES.iter().enumerate() {
            println!("  {name:<12} fraction {:.3} predicted {} truth {}", pred.fractions[k], pred.labels[k], truth[k]);
        }
    }

    let mut cfg = HolisticConfig::new(LossHead::MultilabelLogistic, presence)?;
    cfg.sgd.epochs = 2;
    let (holistic, _) = HolisticModel::fit(train, &cfg)?;

    let methods: Vec<Method> = vec![
        ("holistic", Box::new(|s| holistic.score(std::slice::from_ref(s)).map(|_| ()))),
        ("patch", Box::new(|s| patch.slide_predict(s, PATCH_STRIDE).map(|_| ()))),
    ];
    let timings = benchmark(&methods, &slices, 1, 1)?;
    println!("{TIMING_HEADER}");
    for t in &timings {
        println!("{}", t.csv_row());
    }
    println!("speedup {:.1}x", timings[1].mean_s / timings[0].mean_s);
    Ok(())
}
