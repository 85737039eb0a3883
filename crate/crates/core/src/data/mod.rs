//! Accelerometer recordings and their windowed, normalized form.

mod csv_io;
mod loso;
mod norm;
mod synth;

pub use csv_io::{
    load_csv, load_dataset_dir, write_csv, write_dataset, DatasetManifest, ManifestFile,
};
pub use loso::{loso_splits, Split};
pub use norm::{minmax_normalize, NormMeta, NormScope};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 50.0;

/// A continuous multi-axis recording of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    /// `[time, axes]`
    pub samples: Tensor,
    /// Class index per sample.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if samples.rank() != 2 || samples.shape()[1] == 0 {
            return Err(Error::Data(format!(
                "recording samples must be [time, axes>=1], got {:?}",
                samples.shape()
            )));
        }
        if labels.len() != samples.shape()[0] {
            return Err(Error::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.shape()[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label index {bad} has no class name")));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Recording {
            subject_id: subject_id.into(),
            sample_rate_hz,
            samples,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_axes(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn axis(&self, a: usize) -> impl Iterator<Item = f64> + '_ {
        let axes = self.num_axes();
        self.samples.data().iter().skip(a).step_by(axes).copied()
    }

    /// Re-expresses labels against a superset of class names.
    pub fn remap_classes(&mut self, classes: &[String]) -> Result<()> {
        let map: Vec<usize> = self
            .class_names
            .iter()
            .map(|n| {
                classes
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Data(format!("class `{n}` missing from class list")))
            })
            .collect::<Result<_>>()?;
        for l in &mut self.labels {
            *l = map[*l];
        }
        self.class_names = classes.to_vec();
        Ok(())
    }
}

/// Fixed-length labeled windows, `[n, axes, window_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub windows: Tensor,
    pub labels: Vec<usize>,
    /// Per-window index into `subject_ids`.
    pub subjects: Vec<usize>,
    /// Every subject that contributed a recording, including those too short
    /// to yield a window.
    pub subject_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub norm_meta: Option<NormMeta>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_axes(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Windows every recording and concatenates the results.
    pub fn from_recordings(recs: &[Recording], window_s: f64, overlap: f64) -> Result<Self> {
        let first = recs
            .first()
            .ok_or_else(|| Error::Data("no recordings".into()))?;
        let axes = first.num_axes();
        let w = window_samples(first.sample_rate_hz, window_s)?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        let mut subject_ids: Vec<String> = Vec::new();
        for rec in recs {
            if rec.num_axes() != axes
                || rec.class_names != first.class_names
                || rec.sample_rate_hz != first.sample_rate_hz
            {
                return Err(Error::Data(format!(
                    "recording of `{}` differs in axes, classes or sample rate",
                    rec.subject_id
                )));
            }
            let sid = match subject_ids.iter().position(|s| s == &rec.subject_id) {
                Some(i) => i,
                None => {
                    subject_ids.push(rec.subject_id.clone());
                    subject_ids.len() - 1
                }
            };
            let ds = sliding_windows(rec, window_s, overlap)?;
            data.extend_from_slice(ds.windows.data());
            subjects.extend(std::iter::repeat_n(sid, ds.len()));
            labels.extend(ds.labels);
        }
        let n = labels.len();
        Ok(WindowedDataset {
            windows: Tensor::new(vec![n, axes, w], data)?,
            labels,
            subjects,
            subject_ids,
            class_names: first.class_names.clone(),
            sample_rate_hz: first.sample_rate_hz,
            norm_meta: None,
        })
    }

    /// Sub-dataset of the given windows (subject registry is kept).
    pub fn select(&self, indices: &[usize]) -> Self {
        WindowedDataset {
            windows: self.windows.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
            subject_ids: self.subject_ids.clone(),
            class_names: self.class_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
            norm_meta: self.norm_meta.clone(),
        }
    }
}

fn window_samples(rate: f64, window_s: f64) -> Result<usize> {
    let w = (rate * window_s).round();
    if !(w >= 1.0) {
        return Err(Error::Config(format!(
            "window of {window_s}s at {rate}Hz holds no samples"
        )));
    }
    Ok(w as usize)
}

/// Cuts `rec` into windows of `window_s` seconds advancing by
/// `(1 - overlap)` of a window. Each window takes the majority label of its
/// samples (ties go to the lowest class index).
pub fn sliding_windows(rec: &Recording, window_s: f64, overlap: f64) -> Result<WindowedDataset> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    let w = window_samples(rec.sample_rate_hz, window_s)?;
    let step = ((w as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let t = rec.len();
    let axes = rec.num_axes();
    let n = if t >= w { (t - w) / step + 1 } else { 0 };
    if n == 0 {
        log::warn!(
            "recording of `{}` has {t} samples, shorter than one {w}-sample window",
            rec.subject_id
        );
    }
    let mut data = Vec::with_capacity(n * axes * w);
    let mut labels = Vec::with_capacity(n);
    let src = rec.samples.data();
    let mut counts = vec![0usize; rec.class_names.len()];
    for i in 0..n {
        let start = i * step;
        for a in 0..axes {
            data.extend((start..start + w).map(|s| src[s * axes + a]));
        }
        counts.fill(0);
        for &l in &rec.labels[start..start + w] {
            counts[l] += 1;
        }
        let mut best = 0;
        for (c, &k) in counts.iter().enumerate() {
            if k > counts[best] {
                best = c;
            }
        }
        labels.push(best);
    }
    Ok(WindowedDataset {
        windows: Tensor::new(vec![n, axes, w], data)?,
        subjects: vec![0; n],
        labels,
        subject_ids: vec![rec.subject_id.clone()],
        class_names: rec.class_names.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        norm_meta: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, labels: Vec<usize>) -> Recording {
        let samples = Tensor::new(vec![t, 2], (0..2 * t).map(|v| v as f64).collect()).unwrap();
        Recording::new("s", 50.0, samples, labels, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(
            sliding_windows(&ramp(150, vec![0; 150]), 1.0, 0.5)
                .unwrap()
                .len(),
            5
        );
        assert_eq!(
            sliding_windows(&ramp(50, vec![0; 50]), 1.0, 0.5)
                .unwrap()
                .len(),
            1
        );
        let empty = sliding_windows(&ramp(49, vec![0; 49]), 1.0, 0.5).unwrap();
        assert_eq!(empty.len(), 0);
        assert_eq!(empty.windows.shape(), &[0, 2, 50]);
    }

    #[test]
    fn window_count_formula_holds() {
        for t in 50..400 {
            let n = sliding_windows(&ramp(t, vec![0; t]), 1.0, 0.5)
                .unwrap()
                .len();
            assert_eq!(n, (t - 50) / 25 + 1, "T={t}");
        }
    }

    #[test]
    fn windows_are_axis_major() {
        let ds = sliding_windows(&ramp(75, vec![0; 75]), 1.0, 0.5).unwrap();
        let d = ds.windows.data();
        // window 1 starts at sample 25: axis 0 -> 50, axis 1 -> 51
        let w1 = &d[100..200];
        assert_eq!(w1[0], 50.0);
        assert_eq!(w1[1], 52.0);
        assert_eq!(w1[50], 51.0);
    }

    #[test]
    fn majority_label_with_low_index_tie_break() {
        let mut labels = vec![1; 50];
        labels[..25].fill(0);
        let ds = sliding_windows(&ramp(50, labels), 1.0, 0.5).unwrap();
        assert_eq!(ds.labels, vec![0]);
        let mut labels = vec![1; 50];
        labels[..24].fill(0);
        let ds = sliding_windows(&ramp(50, labels), 1.0, 0.5).unwrap();
        assert_eq!(ds.labels, vec![1]);
    }

    #[test]
    fn concatenation_keeps_subjects_without_windows() {
        let mut a = ramp(100, vec![0; 100]);
        a.subject_id = "a".into();
        let mut b = ramp(10, vec![0; 10]);
        b.subject_id = "b".into();
        let ds = WindowedDataset::from_recordings(&[a, b], 1.0, 0.5).unwrap();
        assert_eq!(ds.subject_ids, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(ds.len(), 3);
        assert!(ds.subjects.iter().all(|&s| s == 0));
    }

    #[test]
    fn recording_validation() {
        let s = Tensor::zeros(&[3, 1]);
        assert!(Recording::new("x", 50.0, s.clone(), vec![0, 0], vec!["a".into()]).is_err());
        assert!(Recording::new("x", 50.0, s.clone(), vec![0, 0, 1], vec!["a".into()]).is_err());
        assert!(Recording::new("x", 0.0, s, vec![0, 0, 0], vec!["a".into()]).is_err());
    }
}
