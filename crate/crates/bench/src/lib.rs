//! Fixtures shared by the benchmarks.

use gammaquant::data::{generate_synthetic, SynthConfig};
use gammaquant::{BitDepth, QuantizerSpec, WindowedDataset};

pub fn specs(bits: u32) -> Vec<(&'static str, QuantizerSpec)> {
    let n = BitDepth::new(bits).expect("valid depth");
    vec![
        ("linear", QuantizerSpec::linear(n)),
        ("log", QuantizerSpec::log(1.0 / 4096.0, n).expect("valid")),
        (
            "gamma_unsigned",
            QuantizerSpec::gamma_unsigned(0.3, n).expect("valid"),
        ),
        (
            "gamma_signed",
            QuantizerSpec::gamma_signed(0.4, -0.1, 1e-3, n).expect("valid"),
        ),
    ]
}

/// Evenly spaced points across a spec's input domain.
pub fn grid(spec: &QuantizerSpec, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| spec.domain().grid_point(i, count))
        .collect()
}

pub fn small_dataset() -> WindowedDataset {
    let cfg = SynthConfig {
        num_subjects: 2,
        duration_s: 30.0,
        ..SynthConfig::default()
    };
    let recs = generate_synthetic(&cfg).expect("synthetic data");
    WindowedDataset::from_recordings(&recs, 1.0, 0.5).expect("windows")
}
