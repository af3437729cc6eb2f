//! Generate a small cohort, write it to disk, read it back and print the
//! per-slice class pixel counts and their mapped targets.
//!
//! ```bash
//! cargo run --release -p ildnet --example synth_dataset -- /tmp/ild-data
//! ```

use std::path::PathBuf;

use ildnet::synthdata::{
    generate_dataset, map_counts_to_labels, mask_to_counts, read_dataset, write_dataset, GeneratorSpec, LabelMapping, CLASS_NAMES,
};

fn main() -> ildnet::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ildnet-synth-example"));
    let spec = GeneratorSpec {
        num_patients: 3,
        slices_per_patient: 2,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, 42)?;
    let manifest = write_dataset(&dir, &slices, Some(42), Some(&spec))?;
    println!("wrote {} slices to {}", manifest.slices.len(), dir.display());

    let (_, loaded) = read_dataset(&dir)?;
    assert_eq!(loaded, slices);

    let scale = spec.area_scale();
    let mappings = [
        LabelMapping::step(6000.0)?.scaled(scale),
        LabelMapping::piecewise(3000.0, 9000.0)?.scaled(scale),
    ];
    println!("{:<28} {}", "slice", CLASS_NAMES.map(|n| format!("{n:>12}")).join(""));
    for s in &loaded {
        let counts = mask_to_counts(s);
        println!("{:<28} {}", s.slice_id, counts.0.map(|c| format!("{c:>12}")).join(""));
        for m in &mappings {
            let labels = map_counts_to_labels(&counts, m);
            println!("  {:<26} {}", m.to_string(), labels.0.map(|v| format!("{v:>12.3}")).join(""));
        }
    }
    Ok(())
}
