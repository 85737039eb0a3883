use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Recording, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic accelerometer generator.
///
/// Class 0 is the background (`null`) class. Every other class is a
/// sinusoid plus second harmonic with its own frequency and inter-axis phase
/// pattern, riding on constant per-axis gravity offsets and white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub axes: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub gravity_bias: Vec<f64>,
    /// Peak amplitude of each class's signal.
    pub class_signal_amp: Vec<f64>,
    /// Second-harmonic amplitude relative to the fundamental.
    pub harmonic_ratio: f64,
    pub segment_s: f64,
    /// Relative per-subject spread of frequency and amplitude.
    pub subject_jitter: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_subjects: 4,
            num_classes: 4,
            axes: 3,
            duration_s: 120.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            noise_std: 0.01,
            gravity_bias: vec![0.3, 0.0, -0.2],
            class_signal_amp: vec![0.005, 0.03, 0.03, 0.03],
            harmonic_ratio: 0.3,
            segment_s: 6.0,
            subject_jitter: 0.1,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_subjects == 0 || self.num_classes == 0 || self.axes == 0 {
            return bad("subjects, classes and axes must all be at least 1".into());
        }
        if self.gravity_bias.len() != self.axes {
            return bad(format!(
                "gravity_bias has {} entries for {} axes",
                self.gravity_bias.len(),
                self.axes
            ));
        }
        if self.class_signal_amp.len() != self.num_classes {
            return bad(format!(
                "class_signal_amp has {} entries for {} classes",
                self.class_signal_amp.len(),
                self.num_classes
            ));
        }
        let finite = self
            .gravity_bias
            .iter()
            .chain(&self.class_signal_amp)
            .chain([&self.noise_std, &self.harmonic_ratio, &self.subject_jitter])
            .all(|v| v.is_finite());
        if !finite {
            return bad("synthetic parameters must be finite".into());
        }
        if self.class_signal_amp.iter().any(|&a| a < 0.0) || self.noise_std < 0.0 {
            return bad("amplitudes and noise must be non-negative".into());
        }
        if !(self.duration_s > 0.0 && self.sample_rate_hz > 0.0 && self.segment_s > 0.0) {
            return bad("duration, sample rate and segment length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.subject_jitter) || self.harmonic_ratio < 0.0 {
            return bad("subject_jitter must lie in [0, 1) and harmonic_ratio be >= 0".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|c| {
                if c == 0 {
                    "null".to_string()
                } else {
                    format!("activity{c}")
                }
            })
            .collect()
    }

    fn class_freq_hz(c: usize) -> f64 {
        if c == 0 {
            0.5
        } else {
            1.0 + 0.75 * (c - 1) as f64
        }
    }

    fn axis_phase(c: usize, a: usize, axes: usize) -> f64 {
        TAU * (c * a) as f64 / (axes as f64 + 1.0)
    }
}

/// Deterministic in `cfg`: the same config always yields identical samples.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let t_len = (cfg.duration_s * cfg.sample_rate_hz).round() as usize;
    let seg_len = ((cfg.segment_s * cfg.sample_rate_hz).round() as usize).max(1);
    let (axes, classes) = (cfg.axes, cfg.num_classes);
    let names = cfg.class_names();
    let norm = 1.0 / (1.0 + cfg.harmonic_ratio);

    let mut out = Vec::with_capacity(cfg.num_subjects);
    for s in 0..cfg.num_subjects {
        let j = cfg.subject_jitter;
        let freq_scale = 1.0 + j * rng.gen_range(-1.0..=1.0);
        let amp_scale = 1.0 + j * rng.gen_range(-1.0..=1.0);
        let shifts: Vec<(f64, f64)> = (0..classes)
            .map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)))
            .collect();

        let mut labels = Vec::with_capacity(t_len);
        let mut order: Vec<usize> = Vec::new();
        while labels.len() < t_len {
            if order.is_empty() {
                order = (0..classes).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
            }
            let c = order.pop().unwrap_or(0);
            let n = seg_len.min(t_len - labels.len());
            labels.extend(std::iter::repeat_n(c, n));
        }

        let mut data = Vec::with_capacity(t_len * axes);
        for (i, &c) in labels.iter().enumerate() {
            let t = i as f64 / cfg.sample_rate_hz;
            let w = TAU * SynthConfig::class_freq_hz(c) * freq_scale;
            let amp = cfg.class_signal_amp[c] * amp_scale * norm;
            let (p1, p2) = shifts[c];
            for a in 0..axes {
                let ph = SynthConfig::axis_phase(c, a, axes);
                let sig = (w * t + ph + p1).sin()
                    + cfg.harmonic_ratio * (2.0 * w * t + 2.0 * ph + p2).sin();
                let n = if cfg.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data.push(cfg.gravity_bias[a] + amp * sig + n);
            }
        }
        out.push(Recording::new(
            format!("subject{s:02}"),
            cfg.sample_rate_hz,
            Tensor::new(vec![t_len, axes], data)?,
            labels,
            names.clone(),
        )?);
    }
    Ok(out)
}
