//! Map one slice through the three attenuation windows, resize to the
//! network input size and standardise with statistics from a small fold.
//!
//! ```bash
//! cargo run --release -p ildnet --example window_preprocess
//! ```

use ildnet::preprocess::{make_input, window_rescale, AttenuationWindow, ChannelStats, WindowSet};
use ildnet::synthdata::{generate_dataset, GeneratorSpec};

fn summary(values: &[f64]) -> String {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!("min {min:8.2} max {max:8.2} mean {mean:8.2}")
}

fn main() -> ildnet::Result<()> {
    let spec = GeneratorSpec {
        num_patients: 2,
        slices_per_patient: 4,
        grid_size: 128,
        ..Default::default()
    };
    let slices = generate_dataset(&spec, 3)?;
    let slice = &slices[0];
    for (name, w) in ["low", "normal", "high"].iter().zip(WindowSet::default().0) {
        println!("{name:<7} [{:>5}, {:>4}] HU  {}", w.hu_low, w.hu_high, summary(&window_rescale(&slice.hu, w)));
    }
    let custom = AttenuationWindow::new(-1000, -400)?;
    println!("custom  [-1000, -400] HU  {}", summary(&window_rescale(&slice.hu, custom)));

    let inputs = slices.iter().map(|s| make_input(s, 64)).collect::<ildnet::Result<Vec<_>>>()?;
    let stats = ChannelStats::fit(&inputs)?;
    println!("channel mean {:.2?} std {:.2?}", stats.mean, stats.std);
    let x = stats.apply(&inputs[0]);
    for c in 0..3 {
        println!("standardised channel {c}: {}", summary(&x[c * 64 * 64..(c + 1) * 64 * 64]));
    }
    Ok(())
}
